//! Fixtures and an independent scalar reference shared by the integration
//! tests.
#![allow(dead_code)]

pub mod reference;

use std::io::Cursor;
use std::path::{Path, PathBuf};

use invsent::corpus::{noise_distribution, NoiseTable, SentencePair, SentencePairs, Vocabulary};
use invsent::embeddings::{read_word_vectors, WordEmbeddingTable};
use invsent::synthetic::{TopicCorpus, TopicCorpusSpec};
use invsent::training::{train, TrainOutcome, TrainingConfig};

/// The synthetic 5-topic corpus with its vectors, loaded in memory.
pub struct Fixture {
    pub spec: TopicCorpusSpec,
    pub corpus: TopicCorpus,
    pub vocab: Vocabulary,
    pub table: WordEmbeddingTable<f32>,
    pub noise: NoiseTable,
    pub pairs: Vec<SentencePair>,
}

impl Fixture {
    pub fn new() -> Self {
        Self::with_spec(TopicCorpusSpec::default())
    }

    pub fn with_spec(spec: TopicCorpusSpec) -> Self {
        let corpus = spec.generate();
        let full = Vocabulary::from_reader(Cursor::new(&corpus.text), Path::new("corpus.txt"), 1).unwrap();
        let loaded = read_word_vectors::<f32, _>(Cursor::new(&corpus.vectors), Path::new("vectors.txt"), &full).unwrap();
        assert!(loaded.missing.is_empty());
        let noise = noise_distribution(&loaded.vocab).unwrap();
        let pairs = SentencePairs::new(Cursor::new(&corpus.text), &loaded.vocab, "corpus.txt")
            .collect::<Result<Vec<_>, _>>()
            .unwrap();
        Fixture {
            spec,
            corpus,
            vocab: loaded.vocab,
            table: loaded.table,
            noise,
            pairs,
        }
    }

    pub fn train(&self, config: &TrainingConfig) -> TrainOutcome<f32> {
        train(config, &self.pairs, &self.table, &self.noise).unwrap()
    }

    pub fn ids(&self, sentence: &str) -> Vec<usize> {
        self.vocab.encode_line(sentence)
    }

    /// Writes the corpus, vectors, a similarity set and a labeled set.
    pub fn write_files(&self, dir: &Path) -> FixtureFiles {
        let (corpus, vectors) = self.corpus.write_to(dir).unwrap();
        let similarity = dir.join("similarity.tsv");
        std::fs::write(&similarity, self.spec.similarity_tsv(60, 1)).unwrap();
        let labeled = dir.join("labeled.tsv");
        std::fs::write(&labeled, self.spec.labeled_tsv(100, 2)).unwrap();
        let sentences = dir.join("sentences.txt");
        let text: String = self
            .spec
            .labeled_sentences(20, 3)
            .into_iter()
            .map(|(_, s)| s + "\n")
            .collect();
        std::fs::write(&sentences, text).unwrap();
        FixtureFiles {
            corpus,
            vectors,
            similarity,
            labeled,
            sentences,
        }
    }
}

pub struct FixtureFiles {
    pub corpus: PathBuf,
    pub vectors: PathBuf,
    pub similarity: PathBuf,
    pub labeled: PathBuf,
    pub sentences: PathBuf,
}

/// Small batches and a learning rate low enough for the per-step retraction
/// to keep up with the optimizer; 500 steps.
pub fn inversion_config(decoder: &str) -> TrainingConfig {
    TrainingConfig {
        batch_size: 32,
        learning_rate: 2e-5,
        decoder: decoder.into(),
        epochs: 10,
        max_steps: Some(500),
        ..Default::default()
    }
}

/// One epoch at the default learning rate with batches of 32.
pub fn semantic_config(decoder: &str) -> TrainingConfig {
    TrainingConfig {
        batch_size: 32,
        decoder: decoder.into(),
        ..Default::default()
    }
}
