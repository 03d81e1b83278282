//! Similarity and classification harnesses.
//!
//! Similarity: cosine between the two sentence vectors, scored against gold
//! ratings with Pearson's r. Classification: a multinomial logistic probe
//! fit by full-batch gradient descent on standardized features.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Vocabulary;
use crate::embeddings::WordEmbeddingTable;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Real;
use crate::representation::{encode_dataset, RepresentationSpec};

pub const PROBE_EPOCHS: usize = 500;
pub const PROBE_L2: f64 = 1e-4;
pub const TRAIN_FRACTION: f64 = 0.8;

pub fn cosine_similarity<T: Real>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine of lengths {} and {}", u.len(), v.len())));
    }
    let f = |x: &T| x.to_f64().unwrap();
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().map(f).zip(v.iter().map(f)) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((uv / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

/// Sample correlation coefficient.
pub fn pearson(preds: &[f64], golds: &[f64]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "pearson over {} predictions and {} golds",
            preds.len(),
            golds.len()
        )));
    }
    if preds.len() < 2 {
        return Err(Error::Correlation("need at least two items"));
    }
    let n = preds.len() as f64;
    let mp = preds.iter().sum::<f64>() / n;
    let mg = golds.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vg) = (0.0, 0.0, 0.0);
    for (p, g) in preds.iter().zip(golds) {
        let (a, b) = (p - mp, g - mg);
        cov += a * b;
        vp += a * a;
        vg += b * b;
    }
    if vp == 0.0 {
        return Err(Error::Correlation("predictions have zero variance"));
    }
    if vg == 0.0 {
        return Err(Error::Correlation("gold scores have zero variance"));
    }
    Ok((cov / (vp.sqrt() * vg.sqrt())).clamp(-1.0, 1.0))
}

/// `[|u − v| ; u ⊙ v]`.
pub fn pair_features<T: Real>(u: &[T], v: &[T]) -> Result<Vec<T>> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("pair of lengths {} and {}", u.len(), v.len())));
    }
    let mut out: Vec<T> = u.iter().zip(v).map(|(&a, &b)| (a - b).abs()).collect();
    out.extend(u.iter().zip(v).map(|(&a, &b)| a * b));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityItem {
    pub a: String,
    pub b: String,
    pub score: f64,
    /// 1-based line in the source file.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDataset {
    pub path: PathBuf,
    pub items: Vec<SimilarityItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub label: usize,
    pub sentence: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub path: PathBuf,
    pub items: Vec<LabeledItem>,
    pub num_classes: usize,
}

fn tsv_lines<'a, R: BufRead + 'a>(
    reader: R,
    path: &'a Path,
) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader.lines().enumerate().map(move |(i, l)| {
        let line = l.map_err(|e| Error::io(path, e))?;
        Ok((i + 1, line.trim_end_matches('\r').to_string()))
    })
}

impl SimilarityDataset {
    /// `sentenceA<TAB>sentenceB<TAB>score` per line.
    pub fn from_reader<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut items = Vec::new();
        for l in tsv_lines(reader, path) {
            let (n, line) = l?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(path, n, format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            let score: f64 = fields[2]
                .trim()
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| Error::parse(path, n, format!("bad score {:?}", fields[2])))?;
            items.push(SimilarityItem {
                a: fields[0].to_string(),
                b: fields[1].to_string(),
                score,
                line: n,
            });
        }
        Ok(SimilarityDataset {
            path: path.to_path_buf(),
            items,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(f), path)
    }
}

impl LabeledDataset {
    /// `label<TAB>sentence` per line, labels are non-negative integers.
    pub fn from_reader<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut items = Vec::new();
        for l in tsv_lines(reader, path) {
            let (n, line) = l?;
            let (label, sentence) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, n, "expected label<TAB>sentence"))?;
            let label: usize = label
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, n, format!("bad label {label:?}")))?;
            items.push(LabeledItem {
                label,
                sentence: sentence.to_string(),
                line: n,
            });
        }
        let num_classes = items.iter().map(|i| i.label + 1).max().unwrap_or(0);
        Ok(LabeledDataset {
            path: path.to_path_buf(),
            items,
            num_classes,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(f), path)
    }
}

/// Token ids of `text`, or a parse error naming the line when no word is in
/// the vocabulary.
pub fn known_ids(vocab: &Vocabulary, text: &str, path: &Path, line: usize) -> Result<Vec<usize>> {
    let ids = vocab.encode_line(text);
    if ids.is_empty() {
        return Err(Error::parse(path, line, "sentence has no in-vocabulary words"));
    }
    Ok(ids)
}

/// Everything needed to encode text with a trained model.
#[derive(Debug, Clone, Copy)]
pub struct Encoder<'a, T> {
    pub model: &'a Model<T>,
    pub vectors: &'a WordEmbeddingTable<T>,
    pub vocab: &'a Vocabulary,
}

/// Pearson correlation between gold scores and cosine similarities. With
/// `spec.postprocess` set, the top direction is removed over every sentence of both
/// columns at once.
pub fn eval_similarity<T: Real>(
    enc: Encoder<'_, T>,
    dataset: &SimilarityDataset,
    spec: RepresentationSpec,
) -> Result<f64> {
    let cosines = similarity_predictions(enc, dataset, spec)?;
    let golds: Vec<f64> = dataset.items.iter().map(|i| i.score).collect();
    pearson(&cosines, &golds)
}

/// Cosine similarity of each dataset pair.
pub fn similarity_predictions<T: Real>(
    enc: Encoder<'_, T>,
    dataset: &SimilarityDataset,
    spec: RepresentationSpec,
) -> Result<Vec<f64>> {
    let mut sentences = Vec::with_capacity(2 * dataset.items.len());
    for it in &dataset.items {
        sentences.push(known_ids(enc.vocab, &it.a, &dataset.path, it.line)?);
    }
    for it in &dataset.items {
        sentences.push(known_ids(enc.vocab, &it.b, &dataset.path, it.line)?);
    }
    let reps = encode_dataset(enc.model, enc.vectors, &sentences, spec)?;
    let (a, b) = reps.split_at(dataset.items.len());
    a.iter().zip(b).map(|(u, v)| cosine_similarity(u, v)).collect()
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `classes × dim`, row major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub classes: usize,
}

/// Mean cross-entropy plus `l2/2 ‖W‖²` (bias not penalized) and its gradient
/// with respect to `params = [W ; bias]`.
pub fn probe_loss_and_grad(
    params: &[f64],
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    l2: f64,
) -> (f64, Vec<f64>) {
    let dim = features.first().map_or(0, |f| f.len());
    let (w, b) = params.split_at(classes * dim);
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let m = features.len() as f64;
    for (x, &y) in features.iter().zip(labels) {
        let p = softmax_scores(w, b, x, classes);
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        for c in 0..classes {
            let d = (p[c] - if c == y { 1.0 } else { 0.0 }) / m;
            for (g, &xi) in grad[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *g += d * xi;
            }
            grad[classes * dim + c] += d;
        }
    }
    loss /= m;
    for (g, &wi) in grad.iter_mut().zip(w) {
        loss += 0.5 * l2 * wi * wi;
        *g += l2 * wi;
    }
    (loss, grad)
}

fn softmax_scores(w: &[f64], b: &[f64], x: &[f64], classes: usize) -> Vec<f64> {
    let dim = x.len();
    let logits: Vec<f64> = (0..classes)
        .map(|c| b[c] + w[c * dim..(c + 1) * dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// Full-batch gradient descent from zero weights with step `1 / L`, where `L`
/// bounds the curvature of the objective.
pub fn fit_logistic_probe<T: Real, V: AsRef<[T]>>(
    features: &[V],
    labels: &[usize],
    l2: f64,
    epochs: usize,
) -> Result<LogisticProbe> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows and {} labels",
            features.len(),
            labels.len()
        )));
    }
    if !(l2 >= 0.0) {
        return Err(Error::Config("l2 must be non-negative".into()));
    }
    let first = labels.first().ok_or(Error::EmptyInput("probe training set"))?;
    if labels.iter().all(|l| l == first) {
        return Err(Error::SingleClass);
    }
    let classes = labels.iter().max().unwrap() + 1;
    let dim = features[0].as_ref().len();
    let raw: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            let f = f.as_ref();
            if f.len() != dim {
                return Err(Error::Shape("ragged feature rows".into()));
            }
            Ok(f.iter().map(|v| v.to_f64().unwrap()).collect())
        })
        .collect::<Result<_>>()?;
    let m = raw.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| raw.iter().map(|r| r[j]).sum::<f64>() / m).collect();
    let scale: Vec<f64> = (0..dim)
        .map(|j| {
            let var = raw.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / m;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let x: Vec<Vec<f64>> = raw.iter().map(|r| standardize(r, &mean, &scale)).collect();

    // Softmax cross-entropy has Hessian ≤ ½ (XᵀX/m) ⊗ I with X including the
    // bias column.
    let mut cov = nalgebra::DMatrix::<f64>::zeros(dim + 1, dim + 1);
    for r in &x {
        let v = nalgebra::DVector::from_iterator(dim + 1, r.iter().copied().chain([1.0]));
        cov += &v * v.transpose() / m;
    }
    let top = cov.symmetric_eigenvalues().iter().copied().fold(0.0, f64::max);
    let step = 1.0 / (0.5 * top + l2);

    let mut params = vec![0.0; classes * (dim + 1)];
    for _ in 0..epochs {
        let (_, g) = probe_loss_and_grad(&params, &x, labels, classes, l2);
        for (p, gi) in params.iter_mut().zip(g) {
            *p -= step * gi;
        }
    }
    let bias = params.split_off(classes * dim);
    Ok(LogisticProbe {
        mean,
        scale,
        weights: params,
        bias,
        classes,
    })
}

fn standardize(r: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    r.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s).collect()
}

impl LogisticProbe {
    pub fn predict<T: Real>(&self, features: &[T]) -> usize {
        let raw: Vec<f64> = features.iter().map(|v| v.to_f64().unwrap()).collect();
        let x = standardize(&raw, &self.mean, &self.scale);
        let p = softmax_scores(&self.weights, &self.bias, &x, self.classes);
        let mut best = 0;
        for c in 1..self.classes {
            if p[c] > p[best] {
                best = c;
            }
        }
        best
    }

    pub fn accuracy<T: Real, V: AsRef<[T]>>(&self, features: &[V], labels: &[usize]) -> f64 {
        let hits = features
            .iter()
            .zip(labels)
            .filter(|(f, &y)| self.predict(f.as_ref()) == y)
            .count();
        hits as f64 / labels.len().max(1) as f64
    }
}

/// Seeded shuffle, then the first `TRAIN_FRACTION` of the items train the
/// probe and the rest are scored.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64) * TRAIN_FRACTION).round() as usize;
    let test = idx.split_off(cut.min(n));
    (idx, test)
}

/// Held-out accuracy of a probe fit on a seeded 80/20 split of
/// `(features, labels)`.
pub fn holdout_accuracy<T: Real, V: AsRef<[T]>>(features: &[V], labels: &[usize], seed: u64) -> Result<f64> {
    let (train, test) = split_indices(labels.len(), seed);
    if test.is_empty() {
        return Err(Error::EmptyInput("held-out split is empty"));
    }
    let pick = |ix: &[usize]| -> (Vec<&[T]>, Vec<usize>) {
        (ix.iter().map(|&i| features[i].as_ref()).collect(), ix.iter().map(|&i| labels[i]).collect())
    };
    let (xtr, ytr) = pick(&train);
    let (xte, yte) = pick(&test);
    let probe = fit_logistic_probe(&xtr, &ytr, PROBE_L2, PROBE_EPOCHS)?;
    Ok(probe.accuracy(&xte, &yte))
}

/// Encodes every sentence, then scores the held-out accuracy of a linear
/// probe.
pub fn eval_classification<T: Real>(
    enc: Encoder<'_, T>,
    dataset: &LabeledDataset,
    spec: RepresentationSpec,
    seed: u64,
) -> Result<f64> {
    let sentences = dataset
        .items
        .iter()
        .map(|it| known_ids(enc.vocab, &it.sentence, &dataset.path, it.line))
        .collect::<Result<Vec<_>>>()?;
    let reps = encode_dataset(enc.model, enc.vectors, &sentences, spec)?;
    let labels: Vec<usize> = dataset.items.iter().map(|i| i.label).collect();
    holdout_accuracy(&reps, &labels, seed)
}
