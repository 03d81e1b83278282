//! Sentence encoders trained with invertible decoders.
//!
//! A bi-directional GRU encodes the current sentence, a decoder maps the code
//! into word-vector space and is trained with negative sampling to predict the
//! words of the next sentence. Both decoders (an orthonormal linear
//! projection, and that projection followed by affine coupling layers) have
//! closed-form inverses, so at test time the inverse decoder serves as a
//! second encoder alongside the GRU.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod decoders;
pub mod embeddings;
pub mod encoder;
pub mod evaluation;
pub mod error;
pub mod model;
pub mod numerics;
pub mod representation;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use model::{Model, ModelShape};
