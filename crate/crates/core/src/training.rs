//! Negative-sampling objective, Adam with global-norm clipping, and the
//! training loop.
//!
//! Per sentence pair `(S_i, S_{i+1})` the model computes
//! `x = f_de(f_en(S_i))` and the loss
//!
//! ```text
//! -(1/N) Σ_j [ log σ(x·v_j) + Σ_k log σ(-x·v_k) ]
//! ```
//!
//! over the `N` words of `S_{i+1}`, with `K` fresh noise words per target.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{build_vocabulary, noise_distribution, sample_negatives, NoiseTable, SentencePair};
use crate::decoders::DecoderKind;
use crate::embeddings::{embed_sentence, load_word_vectors, WordEmbeddingTable};
use crate::encoder::{encode_backward, encode_cached, last_state, last_state_backward};
use crate::error::{Error, Result};
use crate::model::{Model, ModelShape};
use crate::numerics::{dot, log_sigmoid, log_sigmoid_grad, real, Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    /// Per-direction encoder width `d`; the sentence code has `2d` entries.
    pub width: usize,
    /// Word vector width `d_v`, fixed by the vector file.
    pub word_dim: usize,
    /// Hidden units of each coupling net.
    pub hidden_width: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub decoder: String,
    pub epochs: usize,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Apply the orthonormality retraction after each step.
    pub parseval: bool,
    pub min_count: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 512,
            width: 16,
            word_dim: 16,
            hidden_width: 16,
            negatives: 5,
            learning_rate: 5e-4,
            beta: 0.01,
            grad_clip_norm: 5.0,
            seed: 0,
            decoder: DecoderKind::Linear.as_str().to_string(),
            epochs: 1,
            max_steps: None,
            parseval: true,
            min_count: 1,
        }
    }
}

impl TrainingConfig {
    pub fn decoder_kind(&self) -> Result<DecoderKind> {
        self.decoder.parse()
    }

    pub fn shape(&self) -> Result<ModelShape> {
        Ok(ModelShape {
            width: self.width,
            word_dim: self.word_dim,
            hidden_width: self.hidden_width,
            decoder: self.decoder_kind()?,
        })
    }

    pub fn code_dim(&self) -> usize {
        2 * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("width", self.width),
            ("word_dim", self.word_dim),
            ("hidden_width", self.hidden_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("beta", self.beta),
            ("grad_clip_norm", self.grad_clip_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.decoder_kind()? == DecoderKind::Bijective && self.word_dim < 2 {
            return Err(Error::Config("coupling layers need word_dim >= 2".into()));
        }
        Ok(())
    }

    fn rngs(&self) -> (ChaCha8Rng, ChaCha8Rng) {
        let init = ChaCha8Rng::seed_from_u64(self.seed);
        let mut sampling = ChaCha8Rng::seed_from_u64(self.seed);
        sampling.set_stream(1);
        (init, sampling)
    }

    pub fn init_model<T: Real>(&self) -> Result<Model<T>> {
        self.validate()?;
        let (mut rng, _) = self.rngs();
        Ok(Model::init(self.shape()?, self.beta, &mut rng))
    }
}

/// `log σ(x·v_target) + Σ_k log σ(-x·v_k)`.
pub fn negative_sampling_score<T: Real, V: AsRef<[T]>>(x: &[T], target: &[T], negatives: &[V]) -> T {
    let pos = log_sigmoid(dot(x, target));
    negatives
        .iter()
        .fold(pos, |acc, v| acc + log_sigmoid(-dot(x, v.as_ref())))
}

/// Loss of one pair given pre-drawn negatives (`negatives[j]` for target `j`).
pub fn pair_loss_with_negatives<T: Real>(
    model: &Model<T>,
    table: &WordEmbeddingTable<T>,
    pair: &SentencePair,
    negatives: &[Vec<usize>],
) -> Result<T> {
    let (loss, _) = forward(model, table, pair, negatives)?;
    Ok(loss)
}

/// Loss of one pair, drawing `k` fresh negatives per target word.
pub fn pair_loss<T: Real>(
    model: &Model<T>,
    table: &WordEmbeddingTable<T>,
    pair: &SentencePair,
    noise: &NoiseTable,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<T> {
    let negatives = draw_negatives(pair, noise, k, rng);
    pair_loss_with_negatives(model, table, pair, &negatives)
}

pub fn draw_negatives(
    pair: &SentencePair,
    noise: &NoiseTable,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    pair.next
        .iter()
        .map(|_| sample_negatives(noise, k, rng))
        .collect()
}

fn forward<T: Real>(
    model: &Model<T>,
    table: &WordEmbeddingTable<T>,
    pair: &SentencePair,
    negatives: &[Vec<usize>],
) -> Result<(T, Vec<T>)> {
    if pair.next.is_empty() {
        return Err(Error::EmptyInput("next sentence has no words"));
    }
    if negatives.len() != pair.next.len() {
        return Err(Error::Shape("one negative set per target word".into()));
    }
    let inputs = embed_sentence(table, &pair.current)?;
    let (states, _) = encode_cached(&model.encoder, &inputs)?;
    let x = model.decoder.forward(&last_state(&states));
    let loss = objective(&x, table, pair, negatives)?.0;
    Ok((loss, x))
}

/// Loss and `∂loss/∂x` for decoder output `x`.
fn objective<T: Real>(
    x: &[T],
    table: &WordEmbeddingTable<T>,
    pair: &SentencePair,
    negatives: &[Vec<usize>],
) -> Result<(T, Vec<T>)> {
    let n: T = real(pair.next.len() as f64);
    let mut total = T::zero();
    let mut dx = vec![T::zero(); x.len()];
    for (&target, negs) in pair.next.iter().zip(negatives) {
        let check = |id: usize| {
            if id < table.size() {
                Ok(table.vector(id))
            } else {
                Err(Error::InvalidId {
                    id,
                    size: table.size(),
                })
            }
        };
        let v = check(target)?;
        let a = dot(x, v);
        total += log_sigmoid(a);
        // d/dx of -log σ(x·v) is -σ(-x·v) v
        let g = -log_sigmoid_grad(a) / n;
        for (d, &vi) in dx.iter_mut().zip(v) {
            *d += g * vi;
        }
        for &neg in negs {
            let v = check(neg)?;
            let a = dot(x, v);
            total += log_sigmoid(-a);
            let g = log_sigmoid_grad(-a) / n;
            for (d, &vi) in dx.iter_mut().zip(v) {
                *d += g * vi;
            }
        }
    }
    Ok((-total / n, dx))
}

/// Loss of one pair; parameter gradients are added into `grads`.
pub fn pair_loss_and_grad<T: Real>(
    model: &Model<T>,
    table: &WordEmbeddingTable<T>,
    pair: &SentencePair,
    negatives: &[Vec<usize>],
    grads: &mut Model<T>,
) -> Result<T> {
    if pair.next.is_empty() {
        return Err(Error::EmptyInput("next sentence has no words"));
    }
    if negatives.len() != pair.next.len() {
        return Err(Error::Shape("one negative set per target word".into()));
    }
    let inputs = embed_sentence(table, &pair.current)?;
    let (states, enc_cache) = encode_cached(&model.encoder, &inputs)?;
    let z = last_state(&states);
    let (x, dec_cache) = model.decoder.forward_cached(&z);
    let (loss, dx) = objective(&x, table, pair, negatives)?;
    let dz = model.decoder.backward(&dec_cache, &dx, &mut grads.decoder);
    let d_states = last_state_backward(&dz, states.len());
    encode_backward(&model.encoder, &enc_cache, &d_states, &mut grads.encoder);
    Ok(loss)
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<T: Real>(grads: &mut [&mut Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.sum_squares().to_f64().unwrap())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale: T = real(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with a constant learning rate.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2): (T, T) = (real(ADAM_BETA1), real(ADAM_BETA2));
    let one = T::one();
    let c1: T = real(1.0 - ADAM_BETA1.powi(t));
    let c2: T = real(1.0 - ADAM_BETA2.powi(t));
    let lr: T = real(lr);
    let eps: T = real(ADAM_EPS);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let pd = p.data_mut();
        for (((pi, &gi), mi), vi) in pd
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Anything that can replay the training pairs once per epoch, in a fixed
/// order.
pub trait PairSource {
    fn pairs(&self) -> Result<Box<dyn Iterator<Item = Result<SentencePair>> + '_>>;
}

impl PairSource for [SentencePair] {
    fn pairs(&self) -> Result<Box<dyn Iterator<Item = Result<SentencePair>> + '_>> {
        Ok(Box::new(self.iter().cloned().map(Ok)))
    }
}

impl PairSource for Vec<SentencePair> {
    fn pairs(&self) -> Result<Box<dyn Iterator<Item = Result<SentencePair>> + '_>> {
        self.as_slice().pairs()
    }
}

/// A corpus file read against a fixed vocabulary.
pub struct CorpusSource<'v> {
    pub path: std::path::PathBuf,
    pub vocab: &'v crate::corpus::Vocabulary,
}

impl PairSource for CorpusSource<'_> {
    fn pairs(&self) -> Result<Box<dyn Iterator<Item = Result<SentencePair>> + '_>> {
        Ok(Box::new(crate::corpus::iter_sentence_pairs(
            &self.path, self.vocab,
        )?))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    /// Mean pair loss of each batch, before the update it produced.
    pub losses: Vec<f64>,
    pub steps: usize,
}

/// Runs the training loop: per batch, accumulate mean pair-loss gradients,
/// clip, take an Adam step, then retract `W` toward orthonormal rows.
pub fn train<T: Real, S: PairSource + ?Sized>(
    config: &TrainingConfig,
    source: &S,
    table: &WordEmbeddingTable<T>,
    noise: &NoiseTable,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if table.dim() != config.word_dim {
        return Err(Error::Config(format!(
            "word_dim {} does not match vectors of width {}",
            config.word_dim,
            table.dim()
        )));
    }
    if noise.len() != table.size() {
        return Err(Error::Config("noise table and embeddings disagree on vocabulary".into()));
    }
    let (mut init_rng, mut rng) = config.rngs();
    let mut model: Model<T> = Model::init(config.shape()?, config.beta, &mut init_rng);
    let mut adam = AdamState::new(model.tensors().into_iter().map(|(_, t)| t));
    let mut grads = model.zeros_like();
    let mut losses = Vec::new();
    let mut steps = 0usize;
    let mut seen_pairs = false;

    let mut step = |batch: &[SentencePair],
                    model: &mut Model<T>,
                    grads: &mut Model<T>,
                    rng: &mut ChaCha8Rng|
     -> Result<f64> {
        let batch_index = losses.len();
        for t in grads.tensors_mut() {
            t.fill_zero();
        }
        let mut total = 0.0;
        for pair in batch {
            let negatives = draw_negatives(pair, noise, config.negatives, rng);
            total += pair_loss_and_grad(model, table, pair, &negatives, grads)?
                .to_f64()
                .unwrap();
        }
        let mean = total / batch.len() as f64;
        let inv: T = real(1.0 / batch.len() as f64);
        let mut g = grads.tensors_mut();
        for t in g.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        let norm = clip_gradients(&mut g, config.grad_clip_norm);
        if !mean.is_finite() || !norm.is_finite() {
            return Err(Error::NonFinite { batch: batch_index });
        }
        let g_refs: Vec<&Tensor<T>> = grads.tensors().into_iter().map(|(_, t)| t).collect();
        adam_step(&mut model.tensors_mut(), &g_refs, &mut adam, config.learning_rate);
        if config.parseval {
            model.decoder.linear_mut().regularize();
        }
        if !model.is_finite() {
            return Err(Error::NonFinite { batch: batch_index });
        }
        losses.push(mean);
        Ok(mean)
    };

    'epochs: for _ in 0..config.epochs {
        let mut batch = Vec::with_capacity(config.batch_size);
        for pair in source.pairs()? {
            batch.push(pair?);
            seen_pairs = true;
            if batch.len() == config.batch_size {
                step(&batch, &mut model, &mut grads, &mut rng)?;
                steps += 1;
                batch.clear();
                if config.max_steps.is_some_and(|m| steps >= m) {
                    break 'epochs;
                }
            }
        }
        if !batch.is_empty() {
            step(&batch, &mut model, &mut grads, &mut rng)?;
            steps += 1;
            if config.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
        }
        if !seen_pairs {
            return Err(Error::EmptyCorpus);
        }
    }
    drop(step);

    Ok(TrainOutcome {
        model,
        losses,
        steps,
    })
}

/// A corpus and vector file loaded against each other, ready to train.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    /// The configuration with `word_dim` taken from the vector file.
    pub config: TrainingConfig,
    pub corpus: std::path::PathBuf,
    pub vocab: crate::corpus::Vocabulary,
    pub vectors: WordEmbeddingTable<f32>,
    /// Corpus tokens with no vector; they are skipped in every sentence.
    pub missing: Vec<String>,
    pub noise: NoiseTable,
}

/// Builds the vocabulary from `corpus` and loads `vectors` against it. When
/// `word_dim` is given it must match the vector file.
pub fn prepare_run(
    config: &TrainingConfig,
    corpus: &std::path::Path,
    vectors: &std::path::Path,
    word_dim: Option<usize>,
) -> Result<PreparedRun> {
    let full = build_vocabulary(corpus, config.min_count)?;
    let loaded = load_word_vectors::<f32>(vectors, &full)?;
    if let Some(d) = word_dim.filter(|&d| d != loaded.table.dim()) {
        return Err(Error::Config(format!(
            "word_dim {d} does not match {}-d vectors in {}",
            loaded.table.dim(),
            vectors.display()
        )));
    }
    let mut config = config.clone();
    config.word_dim = loaded.table.dim();
    config.validate()?;
    let noise = noise_distribution(&loaded.vocab)?;
    Ok(PreparedRun {
        config,
        corpus: corpus.to_path_buf(),
        vocab: loaded.vocab,
        vectors: loaded.table,
        missing: loaded.missing,
        noise,
    })
}

impl PreparedRun {
    pub fn train(self) -> Result<(Checkpoint, Vec<f64>)> {
        let source = CorpusSource {
            path: self.corpus.clone(),
            vocab: &self.vocab,
        };
        let out = train(&self.config, &source, &self.vectors, &self.noise)?;
        drop(source);
        let ck = Checkpoint {
            config: self.config,
            vocab: self.vocab,
            vectors: self.vectors,
            model: out.model,
        };
        Ok((ck, out.losses))
    }
}

/// [`prepare_run`] then train.
pub fn train_from_files(
    config: &TrainingConfig,
    corpus: &std::path::Path,
    vectors: &std::path::Path,
) -> Result<(Checkpoint, Vec<f64>)> {
    prepare_run(config, corpus, vectors, None)?.train()
}

/// `batch<TAB>loss` lines, batches numbered from 0.
pub fn format_loss_trace(losses: &[f64]) -> String {
    losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i}\t{l}\n"))
        .collect()
}
