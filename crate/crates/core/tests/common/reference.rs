//! Straight-line scalar re-implementation of the training loss, written
//! from the model definition with plain loops and no library numerics.

use invsent::decoders::{Decoder, Mlp};
use invsent::encoder::GruDirection;
use invsent::numerics::Tensor;
use invsent::Model;

fn mat(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn sigm(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// `log σ(a)` without overflow.
pub fn log_sig(a: f64) -> f64 {
    if a >= 0.0 {
        -(-a).exp().ln_1p()
    } else {
        a - a.exp().ln_1p()
    }
}

fn affine(w: &[Vec<f64>], x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for i in 0..w.len() {
        let mut acc = b[i];
        for j in 0..x.len() {
            acc += w[i][j] * x[j];
        }
        out[i] = acc;
    }
    out
}

fn gru_run(p: &GruDirection<f64>, xs: &[Vec<f64>]) -> Vec<f64> {
    let (wr, wu, wc) = (mat(&p.w_r), mat(&p.w_u), mat(&p.w_c));
    let (ur, uu, uc) = (mat(&p.u_r), mat(&p.u_u), mat(&p.u_c));
    let (br, bu, bc) = (p.b_r.data(), p.b_u.data(), p.b_c.data());
    let d = br.len();
    let mut h = vec![0.0; d];
    let zero = vec![0.0; d];
    for x in xs {
        let ax_r = affine(&wr, x, &zero);
        let ax_u = affine(&wu, x, &zero);
        let ax_c = affine(&wc, x, &zero);
        let mut r = vec![0.0; d];
        let mut u = vec![0.0; d];
        for i in 0..d {
            let mut sr = ax_r[i] + br[i];
            let mut su = ax_u[i] + bu[i];
            for j in 0..d {
                sr += ur[i][j] * h[j];
                su += uu[i][j] * h[j];
            }
            r[i] = sigm(sr);
            u[i] = sigm(su);
        }
        let mut next = vec![0.0; d];
        for i in 0..d {
            let mut sc = ax_c[i] + bc[i];
            for j in 0..d {
                sc += uc[i][j] * (r[j] * h[j]);
            }
            let c = sc.tanh();
            next[i] = (1.0 - u[i]) * h[i] + u[i] * c;
        }
        h = next;
    }
    h
}

fn mlp(net: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
    let hidden: Vec<f64> = affine(&mat(&net.w1), x, net.b1.data())
        .into_iter()
        .map(|a| if a > 0.0 { a } else { 0.0 })
        .collect();
    affine(&mat(&net.w2), &hidden, net.b2.data())
}

/// `x = f_de(z)`, the coupling partition rebuilt from the layer index.
pub fn decode(dec: &Decoder<f64>, z: &[f64]) -> Vec<f64> {
    let lin = dec.linear();
    let mut y = affine(&mat(&lin.w), z, lin.b.data());
    if let Decoder::Bijective(b) = dec {
        let n = y.len();
        let half = n.div_ceil(2);
        for (k, layer) in b.layers.iter().enumerate() {
            let (pass, trans): (Vec<usize>, Vec<usize>) = if k % 2 == 0 {
                ((0..half).collect(), (half..n).collect())
            } else {
                ((half..n).collect(), (0..half).collect())
            };
            let x1: Vec<f64> = pass.iter().map(|&i| y[i]).collect();
            let t = mlp(&layer.t_net, &x1);
            let s = match &layer.s_net {
                Some(net) => mlp(net, &x1),
                None => vec![0.0; trans.len()],
            };
            for (j, &i) in trans.iter().enumerate() {
                y[i] = y[i] * s[j].exp() + t[j];
            }
        }
    }
    y
}

/// `log σ(x·v_t) + Σ_k log σ(−x·v_k)`.
pub fn score(x: &[f64], target: &[f64], negatives: &[Vec<f64>]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += a[i] * b[i];
        }
        s
    };
    let mut total = log_sig(dot(x, target));
    for v in negatives {
        total += log_sig(-dot(x, v));
    }
    total
}

/// Negated mean score over the next sentence's words.
pub fn pair_loss(
    model: &Model<f64>,
    table: &[Vec<f64>],
    current: &[usize],
    next: &[usize],
    negatives: &[Vec<usize>],
) -> f64 {
    let xs: Vec<Vec<f64>> = current.iter().map(|&i| table[i].clone()).collect();
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let mut z = gru_run(&model.encoder.forward, &xs);
    z.extend(gru_run(&model.encoder.backward, &rev));
    let x = decode(&model.decoder, &z);
    let mut total = 0.0;
    for (j, &w) in next.iter().enumerate() {
        let negs: Vec<Vec<f64>> = negatives[j].iter().map(|&k| table[k].clone()).collect();
        total += score(&x, &table[w], &negs);
    }
    -total / next.len() as f64
}
