//! Test-time sentence representations.
//!
//! Two encoders come out of a trained model: the GRU itself (`en`), and the
//! inverse decoder applied to every word vector of the sentence and pooled
//! (`de`). They can be ensembled by averaging or concatenation, and a
//! dataset of representations can be post-processed by removing its top
//! singular direction.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::embeddings::{average_vectors, embed_sentence, WordEmbeddingTable};
use crate::encoder::{encode_bidirectional, pool, pool_rows, Pooling};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{real, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    En,
    De,
    EnsembleAvg,
    EnsembleConcat,
    /// `f_de` of the mean-pooled `z_en`, blended with post-processed
    /// averaged word vectors.
    Projected,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::En => "en",
            Source::De => "de",
            Source::EnsembleAvg => "ensemble-avg",
            Source::EnsembleConcat => "ensemble-concat",
            Source::Projected => "projected",
        }
    }

    /// Vector length for a model with code width `code_dim` and word width
    /// `word_dim`.
    pub fn output_len(self, pooling: Pooling, code_dim: usize, word_dim: usize) -> usize {
        let single = pooling.output_len(code_dim);
        match self {
            Source::En | Source::De | Source::EnsembleAvg => single,
            Source::EnsembleConcat => 2 * single,
            Source::Projected => word_dim,
        }
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "en" => Ok(Source::En),
            "de" => Ok(Source::De),
            "ensemble-avg" => Ok(Source::EnsembleAvg),
            "ensemble-concat" => Ok(Source::EnsembleConcat),
            "projected" => Ok(Source::Projected),
            other => Err(Error::Config(format!("unknown representation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Representation<T> {
    pub vector: Vec<T>,
    pub source: Source,
    pub pooling: Pooling,
    pub postprocessed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleMode {
    Avg,
    Concat,
}

/// How to turn a dataset of sentences into vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepresentationSpec {
    pub source: Source,
    pub pooling: Pooling,
    /// Remove the top singular direction, per source, over the dataset.
    pub postprocess: bool,
}

impl RepresentationSpec {
    /// Mean pooling, average ensemble, post-processed.
    pub fn similarity_default() -> Self {
        RepresentationSpec {
            source: Source::EnsembleAvg,
            pooling: Pooling::Mean,
            postprocess: true,
        }
    }

    /// Concat3 pooling, concatenated ensemble, post-processed.
    pub fn classification_default() -> Self {
        RepresentationSpec {
            source: Source::EnsembleConcat,
            pooling: Pooling::Concat3,
            postprocess: true,
        }
    }
}

fn word_rows<T: Real>(table: &WordEmbeddingTable<T>, ids: &[usize]) -> Result<Vec<Vec<T>>> {
    if ids.is_empty() {
        return Err(Error::EmptyInput("sentence has no known words"));
    }
    embed_sentence(table, ids)
}

fn check_dims<T: Real>(model: &Model<T>, table: &WordEmbeddingTable<T>) -> Result<()> {
    if model.word_dim() != table.dim() {
        return Err(Error::Shape(format!(
            "model expects {}-d word vectors, table has {}",
            model.word_dim(),
            table.dim()
        )));
    }
    Ok(())
}

pub fn encode_en<T: Real>(
    model: &Model<T>,
    table: &WordEmbeddingTable<T>,
    ids: &[usize],
    pooling: Pooling,
) -> Result<Representation<T>> {
    check_dims(model, table)?;
    let rows = word_rows(table, ids)?;
    let h = encode_bidirectional(&model.encoder, &rows)?;
    Ok(Representation {
        vector: pool(&h, pooling)?,
        source: Source::En,
        pooling,
        postprocessed: false,
    })
}

/// `f_de⁻¹` applied to each word vector, then pooled.
pub fn encode_de<T: Real>(
    model: &Model<T>,
    table: &WordEmbeddingTable<T>,
    ids: &[usize],
    pooling: Pooling,
) -> Result<Representation<T>> {
    check_dims(model, table)?;
    let rows = word_rows(table, ids)?;
    let codes: Vec<Vec<T>> = rows.iter().map(|v| model.decoder.inverse(v)).collect();
    Ok(Representation {
        vector: pool_rows(&codes, pooling)?,
        source: Source::De,
        pooling,
        postprocessed: false,
    })
}

/// `f_de` of the mean-pooled GRU states, a vector in word space.
pub fn encode_projected<T: Real>(
    model: &Model<T>,
    table: &WordEmbeddingTable<T>,
    ids: &[usize],
) -> Result<Representation<T>> {
    let z = encode_en(model, table, ids, Pooling::Mean)?;
    Ok(Representation {
        vector: model.decoder.forward(&z.vector),
        source: Source::Projected,
        pooling: Pooling::Mean,
        postprocessed: false,
    })
}

pub fn ensemble<T: Real>(
    a: &Representation<T>,
    b: &Representation<T>,
    mode: EnsembleMode,
) -> Result<Representation<T>> {
    let (vector, source) = match mode {
        EnsembleMode::Avg => (average_pair(&a.vector, &b.vector)?, Source::EnsembleAvg),
        EnsembleMode::Concat => {
            let mut v = a.vector.clone();
            v.extend_from_slice(&b.vector);
            (v, Source::EnsembleConcat)
        }
    };
    Ok(Representation {
        vector,
        source,
        pooling: a.pooling,
        postprocessed: a.postprocessed && b.postprocessed,
    })
}

fn average_pair<T: Real>(a: &[T], b: &[T]) -> Result<Vec<T>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cannot average vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let half: T = real(0.5);
    Ok(a.iter().zip(b).map(|(&x, &y)| (x + y) * half).collect())
}

/// Top right singular vector of the rows (no centering), or `None` when all
/// rows are zero.
pub fn top_singular_vector<T: Real, V: AsRef<[T]>>(rows: &[V]) -> Option<Vec<f64>> {
    let d = rows.first()?.as_ref().len();
    let mut gram = nalgebra::DMatrix::<f64>::zeros(d, d);
    for r in rows {
        let r: Vec<f64> = r.as_ref().iter().map(|v| v.to_f64().unwrap()).collect();
        for i in 0..d {
            if r[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                gram[(i, j)] += r[i] * r[j];
            }
        }
    }
    if gram.iter().all(|&g| g == 0.0) {
        return None;
    }
    let eig = gram.symmetric_eigen();
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    let u: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    Some(u.into_iter().map(|x| x / n).collect())
}

/// `r ← r − (r·u) u` for the top right singular vector `u` of the matrix.
/// An all-zero matrix is returned unchanged.
pub fn remove_top_component<T: Real, V: AsRef<[T]>>(rows: &[V]) -> Vec<Vec<T>> {
    let Some(u) = top_singular_vector(rows) else {
        return rows.iter().map(|r| r.as_ref().to_vec()).collect();
    };
    rows.iter()
        .map(|r| {
            let r = r.as_ref();
            let proj: f64 = r.iter().zip(&u).map(|(a, b)| a.to_f64().unwrap() * b).sum();
            r.iter()
                .zip(&u)
                .map(|(&a, &b)| real(a.to_f64().unwrap() - proj * b))
                .collect()
        })
        .collect()
}

fn maybe_postprocess<T: Real>(rows: Vec<Vec<T>>, postprocess: bool) -> Vec<Vec<T>> {
    if postprocess {
        remove_top_component(&rows)
    } else {
        rows
    }
}

fn encode_all<T: Real>(
    sentences: &[Vec<usize>],
    f: impl Fn(&[usize]) -> Result<Representation<T>>,
) -> Result<Vec<Vec<T>>> {
    sentences.iter().map(|s| f(s).map(|r| r.vector)).collect()
}

/// Encodes a whole dataset. Post-processing is applied per source over all
/// the given sentences, before any ensembling. For the projected source the
/// word-vector half of the blend is always post-processed and `postprocess`
/// has no further effect.
pub fn encode_dataset<T: Real>(
    model: &Model<T>,
    table: &WordEmbeddingTable<T>,
    sentences: &[Vec<usize>],
    spec: RepresentationSpec,
) -> Result<Vec<Vec<T>>> {
    let en = || encode_all(sentences, |s| encode_en(model, table, s, spec.pooling));
    let de = || encode_all(sentences, |s| encode_de(model, table, s, spec.pooling));
    let pp = spec.postprocess;
    match spec.source {
        Source::En => Ok(maybe_postprocess(en()?, pp)),
        Source::De => Ok(maybe_postprocess(de()?, pp)),
        Source::EnsembleAvg | Source::EnsembleConcat => {
            let a = maybe_postprocess(en()?, pp);
            let b = maybe_postprocess(de()?, pp);
            a.iter()
                .zip(&b)
                .map(|(x, y)| match spec.source {
                    Source::EnsembleAvg => average_pair(x, y),
                    _ => Ok([x.as_slice(), y.as_slice()].concat()),
                })
                .collect()
        }
        Source::Projected => {
            let projected = encode_all(sentences, |s| encode_projected(model, table, s))?;
            let averaged = sentences
                .iter()
                .map(|s| average_vectors(&word_rows(table, s)?))
                .collect::<Result<Vec<_>>>()?;
            let averaged = remove_top_component(&averaged);
            projected
                .iter()
                .zip(&averaged)
                .map(|(p, a)| average_pair(p, a))
                .collect()
        }
    }
}

/// One line per vector: `index<TAB>v0 v1 ...`.
pub fn format_embeddings<T: Real>(rows: &[Vec<T>]) -> String {
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        write!(out, "{i}\t").unwrap();
        for (j, v) in r.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings<T: Real>(path: &Path, rows: &[Vec<T>]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_embeddings(rows).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::{linear_inverse, DecoderKind};
    use crate::encoder::last_state;
    use crate::model::ModelShape;
    use crate::numerics::Tensor;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(kind: DecoderKind, width: usize, dv: usize) -> (Model<f64>, WordEmbeddingTable<f64>) {
        let shape = ModelShape {
            width,
            word_dim: dv,
            hidden_width: dv,
            decoder: kind,
        };
        let model = Model::init(shape, 0.01, &mut ChaCha8Rng::seed_from_u64(4));
        let table = WordEmbeddingTable::new(Tensor::from_fn(&[5, dv], |i| ((i * 7 % 11) as f64 - 5.0) / 4.0)).unwrap();
        (model, table)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn shapes() {
        let (m, t) = setup(DecoderKind::Linear, 3, 4);
        let ids = [0, 2, 1];
        assert_eq!(encode_en(&m, &t, &ids, Pooling::Mean).unwrap().vector.len(), 6);
        assert_eq!(encode_en(&m, &t, &ids, Pooling::Concat3).unwrap().vector.len(), 18);
        assert_eq!(encode_de(&m, &t, &ids, Pooling::Concat3).unwrap().vector.len(), 18);
        assert_eq!(encode_projected(&m, &t, &ids).unwrap().vector.len(), 4);
        for source in [Source::En, Source::De, Source::EnsembleAvg, Source::EnsembleConcat, Source::Projected] {
            for pooling in [Pooling::Mean, Pooling::Concat3] {
                let spec = RepresentationSpec {
                    source,
                    pooling,
                    postprocess: true,
                };
                let rows = encode_dataset(&m, &t, &[ids.to_vec(), vec![4]], spec).unwrap();
                let want = if source == Source::Projected {
                    4
                } else {
                    source.output_len(pooling, 6, 4)
                };
                assert_eq!(rows[0].len(), want, "{source:?} {pooling:?}");
            }
        }
        assert!(matches!(encode_en(&m, &t, &[], Pooling::Mean), Err(Error::EmptyInput(_))));
        assert!(matches!(encode_de(&m, &t, &[], Pooling::Mean), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn single_token_mean_equals_last_state() {
        let (m, t) = setup(DecoderKind::Linear, 3, 4);
        let h = encode_bidirectional(&m.encoder, &[t.vector(3)]).unwrap();
        let r = encode_en(&m, &t, &[3], Pooling::Mean).unwrap();
        assert_eq!(r.vector, last_state(&h));
    }

    #[test]
    fn identity_decoder_cases() {
        let (mut m, t) = setup(DecoderKind::Linear, 2, 4);
        let lin = m.decoder.linear_mut();
        lin.w = Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        let z = encode_de(&m, &t, &[2], Pooling::Mean).unwrap();
        assert_eq!(z.vector, t.vector(2));
        let p = encode_projected(&m, &t, &[1, 3]).unwrap();
        let en = encode_en(&m, &t, &[1, 3], Pooling::Mean).unwrap();
        assert!(close(&p.vector, &en.vector, 1e-15));
    }

    #[test]
    fn linear_de_is_inverse_of_average() {
        let (m, t) = setup(DecoderKind::Linear, 3, 4);
        let ids = [0, 1, 1, 4];
        let z = encode_de(&m, &t, &ids, Pooling::Mean).unwrap();
        let rows = embed_sentence(&t, &ids).unwrap();
        let direct = linear_inverse(m.decoder.linear(), &average_vectors(&rows).unwrap());
        assert!(close(&z.vector, &direct, 1e-5));
    }

    #[test]
    fn bijective_with_identity_couplings_matches_linear() {
        let (m, t) = setup(DecoderKind::Bijective, 3, 4);
        let linear = Model {
            encoder: m.encoder.clone(),
            decoder: crate::decoders::Decoder::Linear(m.decoder.linear().clone()),
        };
        let ids = [0, 3];
        let a = encode_de(&m, &t, &ids, Pooling::Concat3).unwrap();
        let b = encode_de(&linear, &t, &ids, Pooling::Concat3).unwrap();
        assert!(close(&a.vector, &b.vector, 1e-12));
    }

    #[test]
    fn top_component_examples() {
        let zero = |rows: Vec<Vec<f64>>| remove_top_component(&rows);
        let out = zero(vec![vec![2.0, 0.0], vec![-1.0, 0.0]]);
        assert!(out.iter().flatten().all(|v| v.abs() < 1e-12));
        let out = zero(vec![vec![3.0, 0.0], vec![0.0, 1.0]]);
        assert!(close(&out[0], &[0.0, 0.0], 1e-12) && close(&out[1], &[0.0, 1.0], 1e-12));
        let out = zero(vec![vec![1.0, 1.0]]);
        assert!(close(&out[0], &[0.0, 0.0], 1e-12));
        let z = vec![vec![0.0; 3]; 2];
        assert_eq!(zero(z.clone()), z);
    }

    #[test]
    fn ensemble_examples() {
        let rep = |v: Vec<f64>| Representation {
            vector: v,
            source: Source::En,
            pooling: Pooling::Mean,
            postprocessed: false,
        };
        let a = rep(vec![1.0, -2.0, 0.5]);
        assert_eq!(ensemble(&a, &a, EnsembleMode::Avg).unwrap().vector, a.vector);
        let neg = rep(a.vector.iter().map(|v| -v).collect());
        assert!(ensemble(&a, &neg, EnsembleMode::Avg).unwrap().vector.iter().all(|&v| v == 0.0));
        let c = ensemble(&a, &neg, EnsembleMode::Concat).unwrap();
        assert_eq!(c.vector.len(), 6);
        assert_eq!(c.source, Source::EnsembleConcat);
        assert!(ensemble(&a, &rep(vec![1.0]), EnsembleMode::Avg).is_err());
    }

    #[test]
    fn projected_blend_with_equal_baseline_is_unchanged() {
        let p = vec![0.25, -1.0, 3.0];
        assert_eq!(average_pair(&p, &p).unwrap(), p);
    }

    #[test]
    fn embedding_format() {
        let s = format_embeddings(&[vec![1.0f32, -0.5], vec![2.0, 0.0]]);
        assert_eq!(s, "0\t1 -0.5\n1\t2 0\n");
    }

    proptest! {
        #[test]
        fn removal_is_orthogonal_and_shrinks(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..12)
        ) {
            let out = remove_top_component(&rows);
            if let Some(u) = top_singular_vector(&rows) {
                for (r, o) in rows.iter().zip(&out) {
                    let dot: f64 = o.iter().zip(&u).map(|(a, b)| a * b).sum();
                    prop_assert!(dot.abs() < 1e-6);
                    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    prop_assert!(n(o) <= n(r) + 1e-12);
                }
            }
        }

        #[test]
        fn ensemble_avg_of_self_has_unit_cosine(v in prop::collection::vec(-3.0f64..3.0, 1..8)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let a = average_pair(&v, &v).unwrap();
            let dot: f64 = a.iter().zip(&v).map(|(x, y)| x * y).sum();
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>();
            prop_assert!((dot / n - 1.0).abs() < 1e-9);
        }
    }
}
