//! Checkpoint files.
//!
//! A text manifest followed by a raw little-endian `f32` payload:
//!
//! ```text
//! invsent-checkpoint v1
//! config {"batch_size":512,...}
//! seed 0
//! vocab_hash <sha256 hex>
//! vocab <count>
//! <token>\t<count>
//! ...
//! tensor <name> f32 <d0>x<d1> <byte offset>
//! ...
//! end
//! <payload>
//! ```
//!
//! Offsets are relative to the start of the payload. The word vector table is
//! stored as the tensor `embeddings`, so a checkpoint is self-contained for
//! encoding.

use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::embeddings::WordEmbeddingTable;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Tensor;
use crate::training::TrainingConfig;

pub const MAGIC: &str = "invsent-checkpoint";
pub const VERSION: u32 = 1;
const EMBEDDINGS: &str = "embeddings";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    /// Vocabulary whose ids index the rows of `vectors`.
    pub vocab: Vocabulary,
    pub vectors: WordEmbeddingTable<f32>,
    pub model: Model<f32>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<(String, &Tensor<f32>)> = self.model.tensors();
        tensors.push((EMBEDDINGS.to_string(), self.vectors.matrix()));

        let config = serde_json::to_string(&self.config).expect("config serializes");
        let mut head = format!("{MAGIC} v{VERSION}\nconfig {config}\nseed {}\n", self.config.seed);
        writeln!(head, "vocab_hash {}", self.vocab.fingerprint()).unwrap();
        writeln!(head, "vocab {}", self.vocab.size()).unwrap();
        for (t, c) in self.vocab.tokens().iter().zip(self.vocab.counts()) {
            writeln!(head, "{t}\t{c}").unwrap();
        }
        let mut offset = 0usize;
        for (name, t) in &tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            writeln!(head, "tensor {name} f32 {} {offset}", dims.join("x")).unwrap();
            offset += 4 * t.len();
        }
        head.push_str("end\n");

        let mut out = head.into_bytes();
        out.reserve(offset);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut lines = Lines { bytes, pos: 0 };
        let first = lines.next_line()?;
        let version = first
            .strip_prefix(MAGIC)
            .and_then(|r| r.strip_prefix(" v"))
            .ok_or_else(|| bad("not a checkpoint file (bad magic line)"))?;
        if version != VERSION.to_string() {
            return Err(bad(format!("unsupported checkpoint version {version:?}")));
        }
        let config: TrainingConfig = serde_json::from_str(lines.field("config")?)
            .map_err(|e| bad(format!("bad config: {e}")))?;
        let seed: u64 = parse_num(lines.field("seed")?, "seed")?;
        if seed != config.seed {
            return Err(bad("seed line disagrees with config"));
        }
        let hash = lines.field("vocab_hash")?.to_string();
        let n: usize = parse_num(lines.field("vocab")?, "vocab")?;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let line = lines.next_line()?;
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("bad vocabulary entry {line:?}")))?;
            entries.push((tok.to_string(), parse_num(count, "vocabulary count")?));
        }
        let vocab = Vocabulary::from_ordered(entries);
        if vocab.size() != n || vocab.fingerprint() != hash {
            return Err(bad("vocabulary hash mismatch"));
        }

        let mut manifest = Vec::new();
        loop {
            let line = lines.next_line()?;
            if line == "end" {
                break;
            }
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 5 || parts[0] != "tensor" {
                return Err(bad(format!("bad manifest line {line:?}")));
            }
            if parts[2] != "f32" {
                return Err(bad(format!("unsupported element type {}", parts[2])));
            }
            let shape = parts[3]
                .split('x')
                .map(|d| parse_num(d, "dimension"))
                .collect::<Result<Vec<usize>>>()?;
            let offset: usize = parse_num(parts[4], "offset")?;
            manifest.push((parts[1].to_string(), shape, offset));
        }
        let payload = &bytes[lines.pos..];

        let mut model: Model<f32> = Model::zeros(config.shape()?, config.beta);
        let vocab_rows = vocab.size();
        let mut expected: Vec<(String, Vec<usize>)> = model
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        expected.push((EMBEDDINGS.to_string(), vec![vocab_rows, config.word_dim]));
        if manifest.len() != expected.len() {
            return Err(bad(format!(
                "manifest lists {} tensors, expected {}",
                manifest.len(),
                expected.len()
            )));
        }
        let mut cursor = 0usize;
        let mut values: Vec<Vec<f32>> = Vec::with_capacity(manifest.len());
        for ((name, shape, offset), (want_name, want_shape)) in manifest.iter().zip(&expected) {
            if name != want_name || shape != want_shape {
                return Err(bad(format!(
                    "tensor {name} {shape:?} where {want_name} {want_shape:?} was expected"
                )));
            }
            if *offset != cursor {
                return Err(bad(format!("tensor {name} has offset {offset}, expected {cursor}")));
            }
            let len: usize = shape.iter().product();
            let end = cursor + 4 * len;
            let raw = payload
                .get(cursor..end)
                .ok_or_else(|| bad(format!("payload truncated in tensor {name}")))?;
            values.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
            cursor = end;
        }
        if cursor != payload.len() {
            return Err(bad(format!(
                "payload has {} trailing bytes",
                payload.len() - cursor
            )));
        }
        let table = values.pop().expect("embeddings present");
        for (t, v) in model.tensors_mut().into_iter().zip(values) {
            t.data_mut().copy_from_slice(&v);
        }
        let vectors = WordEmbeddingTable::new(Tensor::from_vec(&[vocab_rows, config.word_dim], table)?)
            .map_err(|e| bad(format!("embedding table: {e}")))?;
        Ok(Checkpoint {
            config,
            vocab,
            vectors,
            model,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn parse_num<N: std::str::FromStr>(s: &str, what: &str) -> Result<N> {
    s.parse().map_err(|_| bad(format!("bad {what} {s:?}")))
}

struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let n = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("manifest ended early"))?;
        self.pos += n + 1;
        std::str::from_utf8(&rest[..n]).map_err(|_| bad("manifest is not UTF-8"))
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| bad(format!("expected {key} line, found {line:?}")))
    }
}
