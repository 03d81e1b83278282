//! Dense tensors, the scalar functions the model is built from, and their
//! reverse-mode adjoints.
//!
//! Every model component computes its own backward pass out of the
//! `*_backward` primitives below. [`finite_difference_check`] is the
//! independent oracle those hand-written adjoints are tested against.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point type the model can be instantiated with.
///
/// Training uses `f32`; gradient checks run the same code with `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + FromStr
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 is representable in every Real type")
}

/// Row-major dense tensor of rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| real(v.to_f64().unwrap())).collect(),
        }
    }

    /// `self · x` for a 2-D tensor.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(self.cols(), x.len());
        (0..self.rows()).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · y` for a 2-D tensor.
    pub fn matvec_t(&self, y: &[T]) -> Vec<T> {
        debug_assert_eq!(self.rows(), y.len());
        let mut out = vec![T::zero(); self.cols()];
        for (i, &yi) in y.iter().enumerate() {
            if yi == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += w * yi;
            }
        }
        out
    }

    /// `self += a bᵀ`.
    pub fn add_outer(&mut self, a: &[T], b: &[T]) {
        let c = self.cols();
        debug_assert_eq!(self.rows(), a.len());
        debug_assert_eq!(c, b.len());
        for (i, &ai) in a.iter().enumerate() {
            if ai == T::zero() {
                continue;
            }
            for (w, &bj) in self.data[i * c..(i + 1) * c].iter_mut().zip(b) {
                *w += ai * bj;
            }
        }
    }

    /// `self += v` elementwise for tensors of equal length.
    pub fn add_slice(&mut self, v: &[T]) {
        debug_assert_eq!(self.len(), v.len());
        for (a, &b) in self.data.iter_mut().zip(v) {
            *a += b;
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn add<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

pub fn hadamard<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x * y).collect()
}

pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log σ(x) = -softplus(-x)`.
#[inline]
pub fn log_sigmoid<T: Real>(x: T) -> T {
    -softplus(-x)
}

#[inline]
pub fn relu<T: Real>(x: T) -> T {
    x.max(T::zero())
}

pub fn map<T: Real>(x: &[T], f: impl Fn(T) -> T) -> Vec<T> {
    x.iter().map(|&v| f(v)).collect()
}

// Adjoints. Each takes the forward output (or input where cheaper) and the
// upstream gradient, returning the gradient with respect to the input.

/// Adjoint of `y = W x`: returns `(dW, dx)`.
pub fn matvec_backward<T: Real>(w: &Tensor<T>, x: &[T], dy: &[T]) -> (Tensor<T>, Vec<T>) {
    let mut dw = Tensor::zeros(w.shape());
    dw.add_outer(dy, x);
    (dw, w.matvec_t(dy))
}

/// Adjoint of `y = σ(a)` given `y`.
pub fn sigmoid_backward<T: Real>(y: &[T], dy: &[T]) -> Vec<T> {
    y.iter()
        .zip(dy)
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect()
}

/// Adjoint of `y = tanh(a)` given `y`.
pub fn tanh_backward<T: Real>(y: &[T], dy: &[T]) -> Vec<T> {
    y.iter()
        .zip(dy)
        .map(|(&t, &g)| g * (T::one() - t * t))
        .collect()
}

/// Adjoint of `y = max(a, 0)` given `a`.
pub fn relu_backward<T: Real>(a: &[T], dy: &[T]) -> Vec<T> {
    a.iter()
        .zip(dy)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

/// Adjoint of `y = exp(a)` given `y`.
pub fn exp_backward<T: Real>(y: &[T], dy: &[T]) -> Vec<T> {
    hadamard(y, dy)
}

/// Derivative of `log σ(x)`, which is `σ(-x)`.
#[inline]
pub fn log_sigmoid_grad<T: Real>(x: T) -> T {
    sigmoid(-x)
}

/// Adjoint of `y = a ⊙ b`: returns `(da, db)`.
pub fn mul_backward<T: Real>(a: &[T], b: &[T], dy: &[T]) -> (Vec<T>, Vec<T>) {
    (hadamard(b, dy), hadamard(a, dy))
}

pub fn concat<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Adjoint of `concat(a, b)` splits the upstream gradient at `a_len`.
pub fn concat_backward<T: Real>(dy: &[T], a_len: usize) -> (Vec<T>, Vec<T>) {
    (dy[..a_len].to_vec(), dy[a_len..].to_vec())
}

/// Gathers `x[indices]`.
pub fn gather<T: Real>(x: &[T], indices: &[usize]) -> Vec<T> {
    indices.iter().map(|&i| x[i]).collect()
}

/// Adjoint of [`gather`]: scatters `dy` back into a zero vector of length `n`.
pub fn gather_backward<T: Real>(dy: &[T], indices: &[usize], n: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); n];
    for (&i, &g) in indices.iter().zip(dy) {
        dx[i] += g;
    }
    dx
}

/// A `rows × cols` matrix with orthonormal rows (columns when `rows > cols`),
/// from the QR factorisation of a seeded Gaussian matrix. Signs are fixed so
/// that `R` has a non-negative diagonal.
pub fn orthonormal<T: Real, R: rand::Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    use rand_distr::{Distribution, StandardNormal};
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = nalgebra::DMatrix::<f64>::from_fn(tall, short, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    // q is tall × short with orthonormal columns
    Tensor::from_fn(&[rows, cols], |k| {
        let (i, j) = (k / cols, k % cols);
        let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
        real(v)
    })
}

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// Relative error per coordinate is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn finite_difference_check<F>(
    loss: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let first = loss(params);
    let second = loss(params);
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut probe = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
    };
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = loss(&probe);
        probe[i] = orig - eps;
        let down = loss(&probe);
        probe[i] = orig;

        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if rel > report.max_rel_error {
            report = GradCheck {
                max_rel_error: rel,
                worst_index: i,
            };
        }
    }
    Ok(report)
}
