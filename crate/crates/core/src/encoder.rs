//! Bi-directional GRU encoder.
//!
//! Gates, with the reset applied before the recurrent product:
//!
//! ```text
//! r = σ(W_r x + U_r h + b_r)
//! u = σ(W_u x + U_u h + b_u)
//! c = tanh(W_c x + U_c (r ⊙ h) + b_c)
//! h' = (1 - u) ⊙ h + u ⊙ c
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    add, concat, hadamard, map, orthonormal, real, sigmoid, sigmoid_backward, tanh_backward, Real,
    Tensor,
};

/// Weights of one direction of the GRU.
#[derive(Debug, Clone, PartialEq)]
pub struct GruDirection<T> {
    pub w_r: Tensor<T>,
    pub w_u: Tensor<T>,
    pub w_c: Tensor<T>,
    pub u_r: Tensor<T>,
    pub u_u: Tensor<T>,
    pub u_c: Tensor<T>,
    pub b_r: Tensor<T>,
    pub b_u: Tensor<T>,
    pub b_c: Tensor<T>,
}

const DIRECTION_TENSORS: [&str; 9] = ["w_r", "w_u", "w_c", "u_r", "u_u", "u_c", "b_r", "b_u", "b_c"];

/// Intermediate values of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    r: Vec<T>,
    u: Vec<T>,
    c: Vec<T>,
    rh: Vec<T>,
}

impl<T: Real> GruDirection<T> {
    pub fn zeros(width: usize, input_dim: usize) -> Self {
        let wi = || Tensor::zeros(&[width, input_dim]);
        let wh = || Tensor::zeros(&[width, width]);
        let b = || Tensor::zeros(&[width]);
        GruDirection {
            w_r: wi(),
            w_u: wi(),
            w_c: wi(),
            u_r: wh(),
            u_u: wh(),
            u_c: wh(),
            b_r: b(),
            b_u: b(),
            b_c: b(),
        }
    }

    /// Orthogonal recurrent weights, input weights uniform in
    /// `±sqrt(6 / (d + d_v))`, zero biases.
    pub fn init<R: Rng + ?Sized>(width: usize, input_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (width + input_dim) as f64).sqrt();
        let mut uniform =
            || Tensor::from_fn(&[width, input_dim], |_| real(rng.random_range(-bound..bound)));
        let (w_r, w_u, w_c) = (uniform(), uniform(), uniform());
        GruDirection {
            w_r,
            w_u,
            w_c,
            u_r: orthonormal(width, width, rng),
            u_u: orthonormal(width, width, rng),
            u_c: orthonormal(width, width, rng),
            b_r: Tensor::zeros(&[width]),
            b_u: Tensor::zeros(&[width]),
            b_c: Tensor::zeros(&[width]),
        }
    }

    pub fn width(&self) -> usize {
        self.b_r.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.cols()
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let t = [
            &self.w_r, &self.w_u, &self.w_c, &self.u_r, &self.u_u, &self.u_c, &self.b_r,
            &self.b_u, &self.b_c,
        ];
        DIRECTION_TENSORS.into_iter().zip(t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.w_r,
            &mut self.w_u,
            &mut self.w_c,
            &mut self.u_r,
            &mut self.u_u,
            &mut self.u_c,
            &mut self.b_r,
            &mut self.b_u,
            &mut self.b_c,
        ]
    }

    fn gate(w: &Tensor<T>, u: &Tensor<T>, b: &Tensor<T>, x: &[T], h: &[T]) -> Vec<T> {
        add(&add(&w.matvec(x), &u.matvec(h)), b.data())
    }

    fn step_cached(&self, x: &[T], h_prev: &[T]) -> (Vec<T>, StepCache<T>) {
        let r = map(&Self::gate(&self.w_r, &self.u_r, &self.b_r, x, h_prev), sigmoid);
        let u = map(&Self::gate(&self.w_u, &self.u_u, &self.b_u, x, h_prev), sigmoid);
        let rh = hadamard(&r, h_prev);
        let c = map(&Self::gate(&self.w_c, &self.u_c, &self.b_c, x, &rh), T::tanh);
        let h = h_prev
            .iter()
            .zip(&u)
            .zip(&c)
            .map(|((&hp, &ui), &ci)| (T::one() - ui) * hp + ui * ci)
            .collect();
        let cache = StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            r,
            u,
            c,
            rh,
        };
        (h, cache)
    }

    /// Accumulates parameter gradients for one step into `grads` and returns
    /// the gradient with respect to the previous hidden state.
    fn step_backward(&self, cache: &StepCache<T>, dh: &[T], grads: &mut GruDirection<T>) -> Vec<T> {
        let one = T::one();
        let du: Vec<T> = dh
            .iter()
            .zip(cache.c.iter().zip(&cache.h_prev))
            .map(|(&g, (&c, &hp))| g * (c - hp))
            .collect();
        let dc = hadamard(dh, &cache.u);
        let mut dh_prev: Vec<T> = dh.iter().zip(&cache.u).map(|(&g, &u)| g * (one - u)).collect();

        let da_c = tanh_backward(&cache.c, &dc);
        grads.w_c.add_outer(&da_c, &cache.x);
        grads.u_c.add_outer(&da_c, &cache.rh);
        grads.b_c.add_slice(&da_c);
        let d_rh = self.u_c.matvec_t(&da_c);
        let dr = hadamard(&d_rh, &cache.h_prev);
        for ((o, &g), &r) in dh_prev.iter_mut().zip(&d_rh).zip(&cache.r) {
            *o += g * r;
        }

        let da_u = sigmoid_backward(&cache.u, &du);
        grads.w_u.add_outer(&da_u, &cache.x);
        grads.u_u.add_outer(&da_u, &cache.h_prev);
        grads.b_u.add_slice(&da_u);

        let da_r = sigmoid_backward(&cache.r, &dr);
        grads.w_r.add_outer(&da_r, &cache.x);
        grads.u_r.add_outer(&da_r, &cache.h_prev);
        grads.b_r.add_slice(&da_r);

        for (o, v) in dh_prev.iter_mut().zip(self.u_u.matvec_t(&da_u)) {
            *o += v;
        }
        for (o, v) in dh_prev.iter_mut().zip(self.u_r.matvec_t(&da_r)) {
            *o += v;
        }
        dh_prev
    }

    pub fn cast<U: Real>(&self) -> GruDirection<U> {
        GruDirection {
            w_r: self.w_r.cast(),
            w_u: self.w_u.cast(),
            w_c: self.w_c.cast(),
            u_r: self.u_r.cast(),
            u_u: self.u_u.cast(),
            u_c: self.u_c.cast(),
            b_r: self.b_r.cast(),
            b_u: self.b_u.cast(),
            b_c: self.b_c.cast(),
        }
    }
}

/// One GRU step.
pub fn gru_step<T: Real>(params: &GruDirection<T>, x: &[T], h_prev: &[T]) -> Vec<T> {
    params.step_cached(x, h_prev).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub forward: GruDirection<T>,
    pub backward: GruDirection<T>,
}

impl<T: Real> EncoderParams<T> {
    pub fn zeros(width: usize, input_dim: usize) -> Self {
        EncoderParams {
            forward: GruDirection::zeros(width, input_dim),
            backward: GruDirection::zeros(width, input_dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(width: usize, input_dim: usize, rng: &mut R) -> Self {
        let forward = GruDirection::init(width, input_dim, rng);
        let backward = GruDirection::init(width, input_dim, rng);
        EncoderParams { forward, backward }
    }

    /// Per-direction width `d`.
    pub fn width(&self) -> usize {
        self.forward.width()
    }

    /// Sentence code width `d_z = 2d`.
    pub fn code_dim(&self) -> usize {
        2 * self.width()
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim()
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let f = self.forward.tensors().into_iter().map(|(n, t)| (format!("fwd.{n}"), t));
        let b = self.backward.tensors().into_iter().map(|(n, t)| (format!("bwd.{n}"), t));
        f.chain(b).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.forward.tensors_mut();
        v.extend(self.backward.tensors_mut());
        v
    }

    pub fn cast<U: Real>(&self) -> EncoderParams<U> {
        EncoderParams {
            forward: self.forward.cast(),
            backward: self.backward.cast(),
        }
    }
}

/// `N × 2d` hidden states; row `t` is `[forward_t ; backward_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence<T> {
    states: Tensor<T>,
    width: usize,
}

impl<T: Real> StateSequence<T> {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn row(&self, t: usize) -> &[T] {
        self.states.row(t)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_tensor(&self) -> &Tensor<T> {
        &self.states
    }
}

/// Step caches of both directions, in the order each direction ran.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    forward: Vec<StepCache<T>>,
    backward: Vec<StepCache<T>>,
}

pub fn encode_bidirectional<T: Real, V: AsRef<[T]>>(
    params: &EncoderParams<T>,
    word_vectors: &[V],
) -> Result<StateSequence<T>> {
    encode_cached(params, word_vectors).map(|(h, _)| h)
}

pub fn encode_cached<T: Real, V: AsRef<[T]>>(
    params: &EncoderParams<T>,
    word_vectors: &[V],
) -> Result<(StateSequence<T>, EncoderCache<T>)> {
    let n = word_vectors.len();
    if n == 0 {
        return Err(Error::EmptyInput("cannot encode an empty sentence"));
    }
    let d = params.width();
    for v in word_vectors {
        if v.as_ref().len() != params.input_dim() {
            return Err(Error::Shape(format!(
                "word vector of length {}, encoder expects {}",
                v.as_ref().len(),
                params.input_dim()
            )));
        }
    }

    let mut fwd_cache = Vec::with_capacity(n);
    let mut fwd_states = Vec::with_capacity(n);
    let mut h = vec![T::zero(); d];
    for v in word_vectors {
        let (next, cache) = params.forward.step_cached(v.as_ref(), &h);
        fwd_cache.push(cache);
        fwd_states.push(next.clone());
        h = next;
    }

    let mut bwd_cache = Vec::with_capacity(n);
    let mut bwd_states = vec![Vec::new(); n];
    let mut h = vec![T::zero(); d];
    for t in (0..n).rev() {
        let (next, cache) = params.backward.step_cached(word_vectors[t].as_ref(), &h);
        bwd_cache.push(cache);
        bwd_states[t] = next.clone();
        h = next;
    }

    let mut data = Vec::with_capacity(n * 2 * d);
    for t in 0..n {
        data.extend_from_slice(&fwd_states[t]);
        data.extend_from_slice(&bwd_states[t]);
    }
    let states = StateSequence {
        states: Tensor::from_vec(&[n, 2 * d], data)?,
        width: d,
    };
    Ok((
        states,
        EncoderCache {
            forward: fwd_cache,
            backward: bwd_cache,
        },
    ))
}

/// Backpropagates per-row state gradients `d_states[t]` (each of length 2d)
/// through both directions, accumulating into `grads`.
pub fn encode_backward<T: Real>(
    params: &EncoderParams<T>,
    cache: &EncoderCache<T>,
    d_states: &[Vec<T>],
    grads: &mut EncoderParams<T>,
) {
    let n = cache.forward.len();
    let d = params.width();
    debug_assert_eq!(d_states.len(), n);

    let mut carry = vec![T::zero(); d];
    for t in (0..n).rev() {
        let dh = add(&d_states[t][..d], &carry);
        carry = params
            .forward
            .step_backward(&cache.forward[t], &dh, &mut grads.forward);
    }

    // the backward direction ran over positions n-1, ..., 0
    let mut carry = vec![T::zero(); d];
    for (step, step_cache) in cache.backward.iter().enumerate().rev() {
        let t = n - 1 - step;
        let dh = add(&d_states[t][d..], &carry);
        carry = params
            .backward
            .step_backward(step_cache, &dh, &mut grads.backward);
    }
}

/// Final state reached by each direction: `[forward_N ; backward_1]`.
pub fn last_state<T: Real>(h: &StateSequence<T>) -> Vec<T> {
    let d = h.width();
    let n = h.len();
    concat(&h.row(n - 1)[..d], &h.row(0)[d..])
}

/// Scatters a gradient on [`last_state`] back onto the state rows.
pub fn last_state_backward<T: Real>(dz: &[T], n: usize) -> Vec<Vec<T>> {
    let d = dz.len() / 2;
    let mut rows = vec![vec![T::zero(); 2 * d]; n];
    rows[n - 1][..d].copy_from_slice(&dz[..d]);
    rows[0][d..].copy_from_slice(&dz[d..]);
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    /// `[max ; min ; mean]`.
    Concat3,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Concat3 => "concat3",
        }
    }

    pub fn output_len(self, width: usize) -> usize {
        match self {
            Pooling::Mean => width,
            Pooling::Concat3 => 3 * width,
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "concat3" => Ok(Pooling::Concat3),
            other => Err(Error::Config(format!("unknown pooling {other:?}"))),
        }
    }
}

/// Pools rows of a matrix over time.
pub fn pool_rows<T: Real, V: AsRef<[T]>>(rows: &[V], mode: Pooling) -> Result<Vec<T>> {
    let first = rows.first().ok_or(Error::EmptyInput("pooling over no rows"))?.as_ref();
    let width = first.len();
    let mut sum = vec![T::zero(); width];
    let mut max = first.to_vec();
    let mut min = first.to_vec();
    for r in rows {
        for (j, &v) in r.as_ref().iter().enumerate() {
            sum[j] += v;
            max[j] = max[j].max(v);
            min[j] = min[j].min(v);
        }
    }
    let n: T = real(rows.len() as f64);
    let mean: Vec<T> = sum.into_iter().map(|s| s / n).collect();
    Ok(match mode {
        Pooling::Mean => mean,
        Pooling::Concat3 => {
            let mut out = max;
            out.extend(min);
            out.extend(mean);
            out
        }
    })
}

pub fn pool<T: Real>(h: &StateSequence<T>, mode: Pooling) -> Result<Vec<T>> {
    let rows: Vec<&[T]> = (0..h.len()).map(|t| h.row(t)).collect();
    pool_rows(&rows, mode)
}
