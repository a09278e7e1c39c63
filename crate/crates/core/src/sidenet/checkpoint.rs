//! Checkpoint files.
//!
//! Layout: the 8-byte magic, a little-endian `u64` manifest length, the JSON
//! manifest (config, vocabulary, tensor directory), then every tensor's
//! values as little-endian `f64` in directory order. Identical parameters
//! always serialize to identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, Result, SidenetError};
use crate::corpus::Vocabulary;
use crate::ndcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SDSMCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    vocab: Vocabulary,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

fn corrupt(msg: impl Into<String>) -> SidenetError {
    SidenetError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let named = self.params.named();
        let manifest = Manifest {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tensors: named
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.num_values());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in named {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if len > body.len() {
            return Err(corrupt("truncated manifest"));
        }
        let manifest: Manifest =
            serde_json::from_slice(&body[..len]).map_err(|e| corrupt(format!("manifest: {e}")))?;
        if manifest.version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported version {}", manifest.version)));
        }
        manifest.config.validate()?;

        let vocab_size = manifest.vocab.len();
        let mut params = ModelParams::zeros(&manifest.config, vocab_size);
        let expected: Vec<(String, Vec<usize>)> = params
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        let found: Vec<(String, Vec<usize>)> = manifest
            .tensors
            .iter()
            .map(|e| (e.name.clone(), e.shape.clone()))
            .collect();
        if expected != found {
            return Err(corrupt("tensor directory does not match the configuration"));
        }

        let mut payload = body[len..].chunks_exact(8);
        let total: usize = expected
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        if payload.len() != total || !payload.remainder().is_empty() {
            return Err(corrupt(format!(
                "expected {total} values, found {} bytes",
                body.len() - len
            )));
        }
        for t in params.tensors_mut() {
            for x in t.data_mut() {
                *x = f64::from_le_bytes(
                    payload
                        .next()
                        .expect("length checked")
                        .try_into()
                        .expect("8 bytes"),
                );
            }
        }
        if !params.all_finite() {
            return Err(corrupt("non-finite parameter values"));
        }
        Ok(Self {
            config: manifest.config,
            vocab: manifest.vocab,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| SidenetError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| SidenetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Tensor names and shapes, in file order.
    pub fn directory(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .named()
            .into_iter()
            .map(|(n, t): (String, &Tensor)| (n, t.shape().to_vec()))
            .collect()
    }
}
