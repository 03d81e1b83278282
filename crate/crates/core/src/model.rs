use rand::Rng;

use crate::decoders::{BijectiveDecoder, Decoder, DecoderKind, LinearDecoder};
use crate::encoder::EncoderParams;
use crate::numerics::{Real, Tensor};

/// Encoder plus decoder. Gradients and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub encoder: EncoderParams<T>,
    pub decoder: Decoder<T>,
}

/// Sizes needed to lay out a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub width: usize,
    pub word_dim: usize,
    pub hidden_width: usize,
    pub decoder: DecoderKind,
}

impl<T: Real> Model<T> {
    pub fn init<R: Rng + ?Sized>(shape: ModelShape, beta: f64, rng: &mut R) -> Self {
        let encoder = EncoderParams::init(shape.width, shape.word_dim, rng);
        let code = 2 * shape.width;
        let decoder = match shape.decoder {
            DecoderKind::Linear => {
                Decoder::Linear(LinearDecoder::init(shape.word_dim, code, beta, rng))
            }
            DecoderKind::Bijective => Decoder::Bijective(BijectiveDecoder::init(
                shape.word_dim,
                code,
                shape.hidden_width,
                beta,
                rng,
            )),
        };
        Model { encoder, decoder }
    }

    pub fn zeros(shape: ModelShape, beta: f64) -> Self {
        let code = 2 * shape.width;
        Model {
            encoder: EncoderParams::zeros(shape.width, shape.word_dim),
            decoder: match shape.decoder {
                DecoderKind::Linear => {
                    Decoder::Linear(LinearDecoder::zeros(shape.word_dim, code, beta))
                }
                DecoderKind::Bijective => Decoder::Bijective(BijectiveDecoder::zeros(
                    shape.word_dim,
                    code,
                    shape.hidden_width,
                    beta,
                )),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Model {
            encoder: EncoderParams::zeros(self.encoder.width(), self.encoder.input_dim()),
            decoder: self.decoder.zeros_like(),
        }
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.code_dim()
    }

    pub fn word_dim(&self) -> usize {
        self.decoder.word_dim()
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let enc = self
            .encoder
            .tensors()
            .into_iter()
            .map(|(n, t)| (format!("encoder.{n}"), t));
        let dec = self
            .decoder
            .tensors()
            .into_iter()
            .map(|(n, t)| (format!("decoder.{n}"), t));
        enc.chain(dec).collect()
    }

    /// Same order as [`Model::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.decoder.tensors_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    /// Overwrites all parameters from a flat slice in [`Model::tensors`] order.
    pub fn assign_flat(&mut self, values: &[T]) {
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        assert_eq!(off, values.len(), "flat parameter length mismatch");
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
        }
    }
}
