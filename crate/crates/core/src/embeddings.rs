//! Fixed pretrained word vectors.
//!
//! Text format: an optional `count dim` header line, then one line per token:
//! the token followed by `dim` decimal floats, fields separated by single
//! spaces. Trailing whitespace on a line is ignored.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Row `i` holds the vector of vocabulary id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddingTable<T> {
    matrix: Tensor<T>,
}

impl<T: Real> WordEmbeddingTable<T> {
    pub fn new(matrix: Tensor<T>) -> Result<Self> {
        if matrix.shape().len() != 2 {
            return Err(Error::Shape("embedding matrix must be 2-D".into()));
        }
        if !matrix.is_finite() {
            return Err(Error::Shape("embedding matrix has non-finite entries".into()));
        }
        Ok(WordEmbeddingTable { matrix })
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn vector(&self, id: usize) -> &[T] {
        self.matrix.row(id)
    }

    pub fn cast<U: Real>(&self) -> WordEmbeddingTable<U> {
        WordEmbeddingTable {
            matrix: self.matrix.cast(),
        }
    }
}

/// Vectors loaded against a vocabulary. Tokens missing from the vector file
/// are dropped from `vocab` and listed in `missing`.
#[derive(Debug, Clone)]
pub struct LoadedVectors<T> {
    pub vocab: Vocabulary,
    pub table: WordEmbeddingTable<T>,
    pub missing: Vec<String>,
}

pub fn load_word_vectors<T: Real>(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
) -> Result<LoadedVectors<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_word_vectors(BufReader::new(file), path, vocab)
}

pub fn read_word_vectors<T: Real, R: BufRead>(
    reader: R,
    path: &Path,
    vocab: &Vocabulary,
) -> Result<LoadedVectors<T>> {
    let mut dim: Option<usize> = None;
    let mut found: HashMap<usize, Vec<T>> = HashMap::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default();
        let rest: Vec<&str> = fields.collect();

        if lineno == 1 && rest.len() == 1 {
            if let (Ok(_), Ok(d)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                dim = Some(d);
                continue;
            }
        }
        match dim {
            Some(d) if d != rest.len() => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {d} values, found {}", rest.len()),
                ))
            }
            None if rest.is_empty() => {
                return Err(Error::parse(path, lineno, "token without values"))
            }
            None => dim = Some(rest.len()),
            _ => {}
        }

        let Some(id) = vocab.id(token) else { continue };
        if found.contains_key(&id) {
            continue;
        }
        let values = rest
            .iter()
            .map(|f| match f.parse::<T>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(path, lineno, format!("bad value {f:?}"))),
            })
            .collect::<Result<Vec<T>>>()?;
        found.insert(id, values);
    }

    if found.is_empty() {
        return Err(Error::NoOverlap);
    }
    let dim = dim.expect("found implies a vector line");
    let missing: Vec<String> = vocab
        .tokens()
        .iter()
        .enumerate()
        .filter(|(i, _)| !found.contains_key(i))
        .map(|(_, t)| t.clone())
        .collect();
    let effective = vocab.retain(|t| found.contains_key(&vocab.id(t).unwrap()));
    let mut data = Vec::with_capacity(effective.size() * dim);
    for tok in effective.tokens() {
        data.extend_from_slice(&found[&vocab.id(tok).unwrap()]);
    }
    let table = WordEmbeddingTable::new(Tensor::from_vec(&[effective.size(), dim], data)?)?;
    Ok(LoadedVectors {
        vocab: effective,
        table,
        missing,
    })
}

/// Looks up each id, preserving order.
pub fn embed_sentence<T: Real>(table: &WordEmbeddingTable<T>, ids: &[usize]) -> Result<Vec<Vec<T>>> {
    ids.iter()
        .map(|&id| {
            if id < table.size() {
                Ok(table.vector(id).to_vec())
            } else {
                Err(Error::InvalidId {
                    id,
                    size: table.size(),
                })
            }
        })
        .collect()
}

pub fn average_vectors<T: Real, V: AsRef<[T]>>(vectors: &[V]) -> Result<Vec<T>> {
    let first = vectors
        .first()
        .ok_or(Error::EmptyInput("average of no vectors"))?;
    let mut sum = vec![T::zero(); first.as_ref().len()];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != sum.len() {
            return Err(Error::Shape("vectors of differing length".into()));
        }
        for (s, &x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n: T = crate::numerics::real(vectors.len() as f64);
    Ok(sum.into_iter().map(|s| s / n).collect())
}
