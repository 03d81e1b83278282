//! Invertible decoders mapping a sentence code `z ∈ R^{d_z}` to the word
//! vector space `R^{d_v}`, and their closed-form inverses.
//!
//! * [`LinearDecoder`]: `x = W z + b`, inverse `z = Wᵀ (x - b)`. Valid as an
//!   inverse while the rows of `W` stay orthonormal, which
//!   [`parseval_update`] enforces after every optimizer step.
//! * [`BijectiveDecoder`]: `x = h(W z + b)` where `h` is a stack of four
//!   affine coupling layers; inverse `z = Wᵀ (h⁻¹(x) - b)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    add, gather, map, orthonormal, real, relu, relu_backward, Real, Tensor,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecoder<T> {
    /// `d_v × d_z`.
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    /// Step size of the orthonormality retraction.
    pub beta: f64,
}

impl<T: Real> LinearDecoder<T> {
    pub fn zeros(word_dim: usize, code_dim: usize, beta: f64) -> Self {
        LinearDecoder {
            w: Tensor::zeros(&[word_dim, code_dim]),
            b: Tensor::zeros(&[word_dim]),
            beta,
        }
    }

    /// Orthonormal rows, zero bias.
    pub fn init<R: Rng + ?Sized>(word_dim: usize, code_dim: usize, beta: f64, rng: &mut R) -> Self {
        LinearDecoder {
            w: orthonormal(word_dim, code_dim, rng),
            b: Tensor::zeros(&[word_dim]),
            beta,
        }
    }

    pub fn word_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn code_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn regularize(&mut self) {
        self.w = parseval_update(&self.w, self.beta);
    }

    fn cast<U: Real>(&self) -> LinearDecoder<U> {
        LinearDecoder {
            w: self.w.cast(),
            b: self.b.cast(),
            beta: self.beta,
        }
    }
}

pub fn linear_forward<T: Real>(dec: &LinearDecoder<T>, z: &[T]) -> Vec<T> {
    add(&dec.w.matvec(z), dec.b.data())
}

pub fn linear_inverse<T: Real>(dec: &LinearDecoder<T>, x: &[T]) -> Vec<T> {
    let centered: Vec<T> = x.iter().zip(dec.b.data()).map(|(&a, &b)| a - b).collect();
    dec.w.matvec_t(&centered)
}

/// `(1 + β) W - β (W Wᵀ) W`.
pub fn parseval_update<T: Real>(w: &Tensor<T>, beta: f64) -> Tensor<T> {
    let (r, c) = (w.rows(), w.cols());
    let beta: T = real(beta);
    let one = T::one();
    let gram = gram(w);
    let mut out = Tensor::zeros(&[r, c]);
    let data = out.data_mut();
    if r <= c {
        // (W Wᵀ) W
        for i in 0..r {
            for k in 0..r {
                let g = gram[i * r + k];
                for j in 0..c {
                    data[i * c + j] += g * w.get(k, j);
                }
            }
        }
    } else {
        // W (Wᵀ W), the same matrix
        for i in 0..r {
            for k in 0..c {
                let wik = w.get(i, k);
                for j in 0..c {
                    data[i * c + j] += wik * gram[k * c + j];
                }
            }
        }
    }
    for (o, &wij) in data.iter_mut().zip(w.data()) {
        *o = (one + beta) * wij - beta * *o;
    }
    out
}

/// The smaller Gram matrix: `W Wᵀ` for wide or square `W`, `Wᵀ W` for tall.
fn gram<T: Real>(w: &Tensor<T>) -> Vec<T> {
    let (r, c) = (w.rows(), w.cols());
    if r <= c {
        let mut g = vec![T::zero(); r * r];
        for i in 0..r {
            for k in i..r {
                let v = crate::numerics::dot(w.row(i), w.row(k));
                g[i * r + k] = v;
                g[k * r + i] = v;
            }
        }
        g
    } else {
        let mut g = vec![T::zero(); c * c];
        for i in 0..r {
            let row = w.row(i);
            for a in 0..c {
                for b in 0..c {
                    g[a * c + b] += row[a] * row[b];
                }
            }
        }
        g
    }
}

/// `‖W Wᵀ - I‖_F` (or `‖Wᵀ W - I‖_F` when `W` has more rows than columns).
pub fn orthonormality_error<T: Real>(w: &Tensor<T>) -> f64 {
    let n = w.rows().min(w.cols());
    gram(w)
        .iter()
        .enumerate()
        .map(|(k, &g)| {
            let target = if k / n == k % n { 1.0 } else { 0.0 };
            let d = g.to_f64().unwrap() - target;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Eigenvalues of the smaller Gram matrix, ascending. These are the squared
/// singular values of `W`.
pub fn gram_eigenvalues<T: Real>(w: &Tensor<T>) -> Vec<f64> {
    let n = w.rows().min(w.cols());
    let g = gram(w);
    let m = nalgebra::DMatrix::<f64>::from_fn(n, n, |i, j| g[i * n + j].to_f64().unwrap());
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// One hidden layer with rectifier units and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

struct MlpCache<T> {
    input: Vec<T>,
    pre: Vec<T>,
    hidden: Vec<T>,
}

impl<T: Real> Mlp<T> {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            w1: Tensor::zeros(&[hidden, input]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[output, hidden]),
            b2: Tensor::zeros(&[output]),
        }
    }

    /// Uniform Glorot hidden layer; zero output layer, so a fresh net
    /// outputs zero everywhere.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (input + hidden) as f64).sqrt();
        let mut m = Self::zeros(input, hidden, output);
        for v in m.w1.data_mut() {
            *v = real(rng.random_range(-bound..bound));
        }
        m
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let hidden = map(&add(&self.w1.matvec(x), self.b1.data()), relu);
        add(&self.w2.matvec(&hidden), self.b2.data())
    }

    fn forward_cached(&self, x: &[T]) -> (Vec<T>, MlpCache<T>) {
        let pre = add(&self.w1.matvec(x), self.b1.data());
        let hidden = map(&pre, relu);
        let out = add(&self.w2.matvec(&hidden), self.b2.data());
        (
            out,
            MlpCache {
                input: x.to_vec(),
                pre,
                hidden,
            },
        )
    }

    fn backward(&self, cache: &MlpCache<T>, dout: &[T], grads: &mut Mlp<T>) -> Vec<T> {
        grads.w2.add_outer(dout, &cache.hidden);
        grads.b2.add_slice(dout);
        let dhidden = self.w2.matvec_t(dout);
        let dpre = relu_backward(&cache.pre, &dhidden);
        grads.w1.add_outer(&dpre, &cache.input);
        grads.b1.add_slice(&dpre);
        self.w1.matvec_t(&dpre)
    }

    fn tensors(&self) -> [(&'static str, &Tensor<T>); 4] {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            w1: self.w1.cast(),
            b1: self.b1.cast(),
            w2: self.w2.cast(),
            b2: self.b2.cast(),
        }
    }
}

/// Affine coupling layer `y₁ = x₁, y₂ = x₂ ⊙ exp(s(x₁)) + t(x₁)`.
///
/// With `s_net = None` it is the additive coupling `y₂ = x₂ + t(x₁)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer<T> {
    pass: Vec<usize>,
    transform: Vec<usize>,
    /// Whether the first `⌈d_v/2⌉` coordinates pass through unchanged.
    pass_first: bool,
    pub s_net: Option<Mlp<T>>,
    pub t_net: Mlp<T>,
}

/// Intermediate values of one coupling layer.
pub struct CouplingCache<T> {
    x_trans: Vec<T>,
    scale: Vec<T>,
    s_cache: Option<MlpCache<T>>,
    t_cache: MlpCache<T>,
}

fn partition(dim: usize, pass_first: bool) -> (Vec<usize>, Vec<usize>) {
    let split = dim.div_ceil(2);
    let first: Vec<usize> = (0..split).collect();
    let second: Vec<usize> = (split..dim).collect();
    if pass_first {
        (first, second)
    } else {
        (second, first)
    }
}

impl<T: Real> CouplingLayer<T> {
    pub fn zeros(dim: usize, hidden: usize, pass_first: bool, affine: bool) -> Self {
        let (pass, transform) = partition(dim, pass_first);
        let net = || Mlp::zeros(pass.len(), hidden, transform.len());
        CouplingLayer {
            s_net: affine.then(net),
            t_net: net(),
            pass,
            transform,
            pass_first,
        }
    }

    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        hidden: usize,
        pass_first: bool,
        affine: bool,
        rng: &mut R,
    ) -> Self {
        let (pass, transform) = partition(dim, pass_first);
        let s_net = affine.then(|| Mlp::init(pass.len(), hidden, transform.len(), rng));
        let t_net = Mlp::init(pass.len(), hidden, transform.len(), rng);
        CouplingLayer {
            pass,
            transform,
            pass_first,
            s_net,
            t_net,
        }
    }

    pub fn dim(&self) -> usize {
        self.pass.len() + self.transform.len()
    }

    pub fn pass_first(&self) -> bool {
        self.pass_first
    }

    pub fn is_affine(&self) -> bool {
        self.s_net.is_some()
    }

    /// Indices copied through unchanged.
    pub fn pass_indices(&self) -> &[usize] {
        &self.pass
    }

    pub fn transform_indices(&self) -> &[usize] {
        &self.transform
    }

    /// Log-scale `s(x₁)`; zero for additive layers.
    pub fn log_scale(&self, x_pass: &[T]) -> Vec<T> {
        match &self.s_net {
            Some(s) => s.forward(x_pass),
            None => vec![T::zero(); self.transform.len()],
        }
    }

    fn forward_cached(&self, x: &[T]) -> (Vec<T>, CouplingCache<T>) {
        let x_pass = gather(x, &self.pass);
        let x_trans = gather(x, &self.transform);
        let (s, s_cache) = match &self.s_net {
            Some(net) => {
                let (s, c) = net.forward_cached(&x_pass);
                (s, Some(c))
            }
            None => (vec![T::zero(); self.transform.len()], None),
        };
        let (t, t_cache) = self.t_net.forward_cached(&x_pass);
        let scale = map(&s, T::exp);
        let mut y = x.to_vec();
        for (k, &i) in self.transform.iter().enumerate() {
            y[i] = x_trans[k] * scale[k] + t[k];
        }
        (
            y,
            CouplingCache {
                x_trans,
                scale,
                s_cache,
                t_cache,
            },
        )
    }

    fn backward(&self, cache: &CouplingCache<T>, dy: &[T], grads: &mut CouplingLayer<T>) -> Vec<T> {
        let dy_trans = gather(dy, &self.transform);
        let mut dx = dy.to_vec();
        for (k, &i) in self.transform.iter().enumerate() {
            dx[i] = dy_trans[k] * cache.scale[k];
        }
        let mut dx_pass = self.t_net.backward(&cache.t_cache, &dy_trans, &mut grads.t_net);
        if let (Some(net), Some(sc), Some(gs)) =
            (&self.s_net, &cache.s_cache, grads.s_net.as_mut())
        {
            let ds: Vec<T> = (0..dy_trans.len())
                .map(|k| dy_trans[k] * cache.x_trans[k] * cache.scale[k])
                .collect();
            for (a, b) in dx_pass.iter_mut().zip(net.backward(sc, &ds, gs)) {
                *a += b;
            }
        }
        for (k, &i) in self.pass.iter().enumerate() {
            dx[i] += dx_pass[k];
        }
        dx
    }

    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v: Vec<(String, &Tensor<T>)> = Vec::new();
        if let Some(s) = &self.s_net {
            v.extend(s.tensors().into_iter().map(|(n, t)| (format!("s.{n}"), t)));
        }
        v.extend(self.t_net.tensors().into_iter().map(|(n, t)| (format!("t.{n}"), t)));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v: Vec<&mut Tensor<T>> = Vec::new();
        if let Some(s) = &mut self.s_net {
            v.extend(s.tensors_mut());
        }
        v.extend(self.t_net.tensors_mut());
        v
    }

    pub fn cast<U: Real>(&self) -> CouplingLayer<U> {
        CouplingLayer {
            pass: self.pass.clone(),
            transform: self.transform.clone(),
            pass_first: self.pass_first,
            s_net: self.s_net.as_ref().map(Mlp::cast),
            t_net: self.t_net.cast(),
        }
    }
}

/// Fills every net with weights drawn from `U[-2, 2] / fan_in`, the
/// distribution used to exercise coupling layers in tests.
pub fn randomize_bounded<T: Real, R: Rng + ?Sized>(layer: &mut CouplingLayer<T>, rng: &mut R) {
    let nets = layer.s_net.iter_mut().chain(std::iter::once(&mut layer.t_net));
    for net in nets {
        let (fan1, fan2) = (net.w1.cols() as f64, net.w2.cols() as f64);
        for (t, fan) in [
            (&mut net.w1, fan1),
            (&mut net.b1, fan1),
            (&mut net.w2, fan2),
            (&mut net.b2, fan2),
        ] {
            for v in t.data_mut() {
                *v = real(rng.random_range(-2.0..2.0) / fan);
            }
        }
    }
}

pub fn coupling_apply<T: Real>(layer: &CouplingLayer<T>, x: &[T]) -> Vec<T> {
    layer.forward_cached(x).0
}

pub fn coupling_invert<T: Real>(layer: &CouplingLayer<T>, y: &[T]) -> Vec<T> {
    let y_pass = gather(y, &layer.pass);
    let s = layer.log_scale(&y_pass);
    let t = layer.t_net.forward(&y_pass);
    let mut x = y.to_vec();
    for (k, &i) in layer.transform.iter().enumerate() {
        x[i] = (y[i] - t[k]) * (-s[k]).exp();
    }
    x
}

pub const COUPLING_LAYERS: usize = 4;

/// Orthonormal-regularised linear projection followed by coupling layers
/// with alternating partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct BijectiveDecoder<T> {
    pub linear: LinearDecoder<T>,
    pub layers: Vec<CouplingLayer<T>>,
}

impl<T: Real> BijectiveDecoder<T> {
    pub fn zeros(word_dim: usize, code_dim: usize, hidden: usize, beta: f64) -> Self {
        BijectiveDecoder {
            linear: LinearDecoder::zeros(word_dim, code_dim, beta),
            layers: (0..COUPLING_LAYERS)
                .map(|k| CouplingLayer::zeros(word_dim, hidden, k % 2 == 0, true))
                .collect(),
        }
    }

    pub fn init<R: Rng + ?Sized>(
        word_dim: usize,
        code_dim: usize,
        hidden: usize,
        beta: f64,
        rng: &mut R,
    ) -> Self {
        let linear = LinearDecoder::init(word_dim, code_dim, beta, rng);
        let layers = (0..COUPLING_LAYERS)
            .map(|k| CouplingLayer::init(word_dim, hidden, k % 2 == 0, true, rng))
            .collect();
        BijectiveDecoder { linear, layers }
    }

    /// Applies the coupling stack `h`.
    pub fn couple(&self, x: &[T]) -> Vec<T> {
        self.layers
            .iter()
            .fold(x.to_vec(), |acc, layer| coupling_apply(layer, &acc))
    }

    /// Applies `h⁻¹`.
    pub fn uncouple(&self, y: &[T]) -> Vec<T> {
        self.layers
            .iter()
            .rev()
            .fold(y.to_vec(), |acc, layer| coupling_invert(layer, &acc))
    }
}

pub fn bijective_forward<T: Real>(dec: &BijectiveDecoder<T>, z: &[T]) -> Vec<T> {
    dec.couple(&linear_forward(&dec.linear, z))
}

pub fn bijective_inverse<T: Real>(dec: &BijectiveDecoder<T>, x: &[T]) -> Vec<T> {
    linear_inverse(&dec.linear, &dec.uncouple(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    Linear,
    Bijective,
}

impl DecoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::Linear => "linear",
            DecoderKind::Bijective => "bijective",
        }
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(DecoderKind::Linear),
            "bijective" => Ok(DecoderKind::Bijective),
            other => Err(Error::Config(format!("unknown decoder kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decoder<T> {
    Linear(LinearDecoder<T>),
    Bijective(BijectiveDecoder<T>),
}

/// Forward intermediates of a [`Decoder`].
pub struct DecoderCache<T> {
    z: Vec<T>,
    layers: Vec<CouplingCache<T>>,
}

impl<T: Real> Decoder<T> {
    pub fn kind(&self) -> DecoderKind {
        match self {
            Decoder::Linear(_) => DecoderKind::Linear,
            Decoder::Bijective(_) => DecoderKind::Bijective,
        }
    }

    pub fn linear(&self) -> &LinearDecoder<T> {
        match self {
            Decoder::Linear(l) => l,
            Decoder::Bijective(b) => &b.linear,
        }
    }

    pub fn linear_mut(&mut self) -> &mut LinearDecoder<T> {
        match self {
            Decoder::Linear(l) => l,
            Decoder::Bijective(b) => &mut b.linear,
        }
    }

    pub fn word_dim(&self) -> usize {
        self.linear().word_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.linear().code_dim()
    }

    /// `f_de(z)`.
    pub fn forward(&self, z: &[T]) -> Vec<T> {
        match self {
            Decoder::Linear(l) => linear_forward(l, z),
            Decoder::Bijective(b) => bijective_forward(b, z),
        }
    }

    /// `f_de⁻¹(x)`.
    pub fn inverse(&self, x: &[T]) -> Vec<T> {
        match self {
            Decoder::Linear(l) => linear_inverse(l, x),
            Decoder::Bijective(b) => bijective_inverse(b, x),
        }
    }

    pub fn forward_cached(&self, z: &[T]) -> (Vec<T>, DecoderCache<T>) {
        let mut x = linear_forward(self.linear(), z);
        let mut layers = Vec::new();
        if let Decoder::Bijective(b) = self {
            for layer in &b.layers {
                let (y, c) = layer.forward_cached(&x);
                layers.push(c);
                x = y;
            }
        }
        (
            x,
            DecoderCache {
                z: z.to_vec(),
                layers,
            },
        )
    }

    /// Accumulates parameter gradients and returns `∂/∂z`.
    pub fn backward(&self, cache: &DecoderCache<T>, dx: &[T], grads: &mut Decoder<T>) -> Vec<T> {
        let mut d = dx.to_vec();
        if let (Decoder::Bijective(b), Decoder::Bijective(gb)) = (self, &mut *grads) {
            for ((layer, c), g) in b
                .layers
                .iter()
                .zip(&cache.layers)
                .zip(gb.layers.iter_mut())
                .rev()
            {
                d = layer.backward(c, &d, g);
            }
        }
        let lin = self.linear();
        let glin = grads.linear_mut();
        glin.w.add_outer(&d, &cache.z);
        glin.b.add_slice(&d);
        lin.w.matvec_t(&d)
    }

    pub fn zeros_like(&self) -> Decoder<T> {
        let lin = self.linear();
        match self {
            Decoder::Linear(_) => {
                Decoder::Linear(LinearDecoder::zeros(lin.word_dim(), lin.code_dim(), lin.beta))
            }
            Decoder::Bijective(b) => Decoder::Bijective(BijectiveDecoder {
                linear: LinearDecoder::zeros(lin.word_dim(), lin.code_dim(), lin.beta),
                layers: b
                    .layers
                    .iter()
                    .map(|l| {
                        let hidden = l.t_net.b1.len();
                        CouplingLayer::zeros(l.dim(), hidden, l.pass_first, l.is_affine())
                    })
                    .collect(),
            }),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let lin = self.linear();
        let mut v = vec![("w".to_string(), &lin.w), ("b".to_string(), &lin.b)];
        if let Decoder::Bijective(b) = self {
            for (k, layer) in b.layers.iter().enumerate() {
                v.extend(
                    layer
                        .tensors()
                        .into_iter()
                        .map(|(n, t)| (format!("coupling{k}.{n}"), t)),
                );
            }
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Decoder::Linear(l) => vec![&mut l.w, &mut l.b],
            Decoder::Bijective(b) => {
                let mut v = vec![&mut b.linear.w, &mut b.linear.b];
                for layer in &mut b.layers {
                    v.extend(layer.tensors_mut());
                }
                v
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Decoder<U> {
        match self {
            Decoder::Linear(l) => Decoder::Linear(l.cast()),
            Decoder::Bijective(b) => Decoder::Bijective(BijectiveDecoder {
                linear: b.linear.cast(),
                layers: b.layers.iter().map(CouplingLayer::cast).collect(),
            }),
        }
    }
}
