//! Corpus ingestion: vocabulary, noise distribution for negative sampling,
//! and the stream of adjacent sentence pairs.
//!
//! A corpus file holds one sentence per line; a blank line ends a document.
//! Tokens are lowercased and split on whitespace.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn tokenize(line: &str) -> impl Iterator<Item = String> + '_ {
    line.split_whitespace().map(str::to_lowercase)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(token, count)` pairs, dropping entries
    /// below `min_count`. Ids are assigned by descending count, ties broken
    /// lexicographically.
    pub fn from_counts<I, S>(counts: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut merged: HashMap<String, u64> = HashMap::new();
        for (tok, c) in counts {
            *merged.entry(tok.into()).or_default() += c;
        }
        let mut entries: Vec<(String, u64)> = merged
            .into_iter()
            .filter(|&(_, c)| c >= min_count && c > 0)
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_ordered(entries))
    }

    /// Builds a vocabulary keeping the given order as id order.
    pub(crate) fn from_ordered(entries: Vec<(String, u64)>) -> Self {
        let mut token_to_id = HashMap::with_capacity(entries.len());
        let mut tokens = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (tok, c) in entries {
            token_to_id.insert(tok.clone(), tokens.len());
            tokens.push(tok);
            counts.push(c);
        }
        Vocabulary {
            token_to_id,
            tokens,
            counts,
        }
    }

    pub fn from_reader<R: BufRead>(reader: R, path: &Path, min_count: u64) -> Result<Self> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            for tok in tokenize(&line) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        Self::from_counts(counts, min_count)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, token: &str) -> Option<u64> {
        self.id(token).map(|i| self.counts[i])
    }

    /// Keeps only the tokens for which `keep` holds, re-indexing densely in
    /// the existing order.
    pub fn retain(&self, mut keep: impl FnMut(&str) -> bool) -> Vocabulary {
        Self::from_ordered(
            self.tokens
                .iter()
                .zip(&self.counts)
                .filter(|(t, _)| keep(t))
                .map(|(t, &c)| (t.clone(), c))
                .collect(),
        )
    }

    /// Maps a line of text to known token ids, dropping unknown tokens.
    pub fn encode_line(&self, line: &str) -> Vec<usize> {
        tokenize(line).filter_map(|t| self.id(&t)).collect()
    }

    /// Hex SHA-256 over tokens and counts in id order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            h.update(t.as_bytes());
            h.update(b"\t");
            h.update(c.to_string().as_bytes());
            h.update(b"\n");
        }
        h.finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    }
}

pub fn build_vocabulary(corpus_path: impl AsRef<Path>, min_count: u64) -> Result<Vocabulary> {
    let path = corpus_path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Vocabulary::from_reader(BufReader::new(file), path, min_count)
}

/// Unigram counts raised to the 0.75 power and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

pub const NOISE_POWER: f64 = 0.75;

impl NoiseTable {
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyInput("noise distribution over an empty vocabulary"));
        }
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(NOISE_POWER)).collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let cumulative = probs
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(NoiseTable { probs, cumulative })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.probs.len() - 1)
    }
}

pub fn noise_distribution(vocab: &Vocabulary) -> Result<NoiseTable> {
    NoiseTable::from_counts(vocab.counts())
}

/// Draws `k` ids with replacement. The positive target is not excluded.
pub fn sample_negatives<R: Rng + ?Sized>(noise: &NoiseTable, k: usize, rng: &mut R) -> Vec<usize> {
    (0..k).map(|_| noise.sample(rng)).collect()
}

/// The current sentence and the one following it in the same document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub current: Vec<usize>,
    pub next: Vec<usize>,
}

/// Streams adjacent-line pairs from a corpus reader in file order.
pub struct SentencePairs<'v, R> {
    lines: std::io::Lines<R>,
    vocab: &'v Vocabulary,
    path: PathBuf,
    prev: Option<Vec<usize>>,
}

impl<'v, R: BufRead> SentencePairs<'v, R> {
    pub fn new(reader: R, vocab: &'v Vocabulary, path: impl Into<PathBuf>) -> Self {
        SentencePairs {
            lines: reader.lines(),
            vocab,
            path: path.into(),
            prev: None,
        }
    }
}

impl<R: BufRead> Iterator for SentencePairs<'_, R> {
    type Item = Result<SentencePair>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if line.trim().is_empty() {
                self.prev = None;
                continue;
            }
            let ids = self.vocab.encode_line(&line);
            let prev = self.prev.replace(ids.clone());
            if let Some(current) = prev {
                if !current.is_empty() && !ids.is_empty() {
                    return Some(Ok(SentencePair { current, next: ids }));
                }
            }
        }
    }
}

pub fn iter_sentence_pairs<'v>(
    corpus_path: impl AsRef<Path>,
    vocab: &'v Vocabulary,
) -> Result<SentencePairs<'v, BufReader<File>>> {
    let path = corpus_path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(SentencePairs::new(BufReader::new(file), vocab, path))
}
