//! Seeded synthetic corpora with topic structure, used by the test suites
//! and handy for smoke-testing the CLI.
//!
//! Each topic owns a disjoint sub-vocabulary `t{topic}w{k}`; a small set of
//! shared words `s{k}` appears in every topic. Paragraphs stay on a single
//! topic and are separated by blank lines. Word vectors are a global offset
//! plus a topic centroid plus isotropic noise.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TopicCorpusSpec {
    pub topics: usize,
    pub words_per_topic: usize,
    pub shared_words: usize,
    /// Number of consecutive pairs to generate.
    pub pairs: usize,
    pub paragraph_len: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token is drawn from the shared words.
    pub shared_rate: f64,
    pub dim: usize,
    /// Norm of each topic centroid, relative to unit-norm word noise.
    pub topic_strength: f64,
    pub offset_strength: f64,
    pub seed: u64,
}

impl Default for TopicCorpusSpec {
    fn default() -> Self {
        TopicCorpusSpec {
            topics: 5,
            words_per_topic: 24,
            shared_words: 6,
            pairs: 10_000,
            paragraph_len: 20,
            min_len: 5,
            max_len: 10,
            shared_rate: 0.25,
            dim: 16,
            topic_strength: 0.5,
            offset_strength: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TopicCorpus {
    pub spec: TopicCorpusSpec,
    /// Corpus text, one sentence per line.
    pub text: String,
    /// Word vectors in the text format with a `count dim` header.
    pub vectors: String,
}

impl TopicCorpusSpec {
    pub fn topic_word(topic: usize, k: usize) -> String {
        format!("t{topic}w{k}")
    }

    pub fn shared_word(k: usize) -> String {
        format!("s{k}")
    }

    /// A sentence from `topic`, drawn with `rng`.
    pub fn sentence<R: Rng + ?Sized>(&self, topic: usize, rng: &mut R) -> String {
        let len = rng.random_range(self.min_len..=self.max_len);
        let words: Vec<String> = (0..len)
            .map(|_| {
                if self.shared_words > 0 && rng.random_bool(self.shared_rate) {
                    Self::shared_word(rng.random_range(0..self.shared_words))
                } else {
                    Self::topic_word(topic, rng.random_range(0..self.words_per_topic))
                }
            })
            .collect();
        words.join(" ")
    }

    /// `count` labeled sentences, topics assigned round robin, drawn from
    /// an RNG independent of the training corpus.
    pub fn labeled_sentences(&self, count: usize, seed: u64) -> Vec<(usize, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        (0..count)
            .map(|i| {
                let topic = i % self.topics;
                (topic, self.sentence(topic, &mut rng))
            })
            .collect()
    }

    /// `label<TAB>sentence` lines with the topic as label.
    pub fn labeled_tsv(&self, count: usize, seed: u64) -> String {
        self.labeled_sentences(count, seed)
            .into_iter()
            .map(|(t, s)| format!("{t}\t{s}\n"))
            .collect()
    }

    /// `a<TAB>b<TAB>score` lines; the score is 1 for same-topic pairs and 0
    /// otherwise, and half of the pairs share a topic.
    pub fn similarity_tsv(&self, count: usize, seed: u64) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(9);
        let mut out = String::new();
        for i in 0..count {
            let ta = rng.random_range(0..self.topics);
            let tb = if i % 2 == 0 || self.topics == 1 {
                ta
            } else {
                (ta + rng.random_range(1..self.topics)) % self.topics
            };
            let a = self.sentence(ta, &mut rng);
            let b = self.sentence(tb, &mut rng);
            let score = if ta == tb { 1 } else { 0 };
            out.push_str(&format!("{a}\t{b}\t{score}\n"));
        }
        out
    }

    pub fn generate(&self) -> TopicCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut text = String::new();
        let mut pairs = 0;
        let topics: Vec<usize> = (0..self.topics).collect();
        while pairs < self.pairs {
            let topic = *topics.choose(&mut rng).expect("at least one topic");
            let n = self.paragraph_len.min(self.pairs - pairs + 1).max(2);
            for _ in 0..n {
                text.push_str(&self.sentence(topic, &mut rng));
                text.push('\n');
            }
            text.push('\n');
            pairs += n - 1;
        }
        TopicCorpus {
            spec: self.clone(),
            text,
            vectors: self.vectors(),
        }
    }

    fn vectors(&self) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(3);
        let dim = self.dim;
        let mut gaussian = |scale: f64| -> Vec<f64> {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|a| a * scale / n).collect()
        };
        let offset = gaussian(self.offset_strength);
        let centroids: Vec<Vec<f64>> = (0..self.topics).map(|_| gaussian(self.topic_strength)).collect();
        let count = self.topics * self.words_per_topic + self.shared_words;
        let mut out = format!("{count} {dim}\n");
        let mut emit = |name: String, base: &[f64], noise: Vec<f64>| {
            out.push_str(&name);
            for (a, b) in base.iter().zip(noise) {
                write!(out, " {:.6}", a + b).unwrap();
            }
            out.push('\n');
        };
        for k in 0..self.shared_words {
            let noise = gaussian(1.0);
            emit(Self::shared_word(k), &offset, noise);
        }
        for (t, c) in centroids.iter().enumerate() {
            let base: Vec<f64> = offset.iter().zip(c).map(|(a, b)| a + b).collect();
            for k in 0..self.words_per_topic {
                let noise = gaussian(1.0);
                emit(Self::topic_word(t, k), &base, noise);
            }
        }
        out
    }
}

impl TopicCorpus {
    /// Writes `corpus.txt` and `vectors.txt` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
        let corpus = dir.join("corpus.txt");
        let vectors = dir.join("vectors.txt");
        std::fs::write(&corpus, &self.text).map_err(|e| Error::io(&corpus, e))?;
        std::fs::write(&vectors, &self.vectors).map_err(|e| Error::io(&vectors, e))?;
        Ok((corpus, vectors))
    }
}
