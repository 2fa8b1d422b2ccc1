//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "CLZGCKPT"
//! version      u32
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON
//! payload      every parameter's values as f64, in header order
//! checksum     32 bytes, SHA-256 of everything above
//! ```
//!
//! The header carries the training configuration, the vocabulary, the
//! training step and the name and shape of each parameter.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::numcore::{Array, ParameterStore};

pub const MAGIC: &[u8; 8] = b"CLZGCKPT";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub params: ParameterStore,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    config: TrainConfig,
    vocab: Vocabulary,
    params: Vec<ParamEntry>,
}

impl Checkpoint {
    pub fn from_model(config: &TrainConfig, vocab: &Vocabulary, model: &Model, step: u64) -> Self {
        Checkpoint {
            config: config.clone(),
            vocab: vocab.clone(),
            params: model.params().clone(),
            step,
        }
    }

    /// Rebuilds the model, checking parameter names and shapes against the config.
    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.config.model.clone(), self.vocab.len(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            step: self.step,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self
                .params
                .iter()
                .map(|(_, name, a)| ParamEntry {
                    name: name.to_string(),
                    shape: a.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("checkpoint header serialises");
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.params.scalar_count() + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, _, a) in self.params.iter() {
            for x in a.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let prefix = MAGIC.len() + 4 + 8;
        if bytes.len() < prefix + CHECKSUM_LEN {
            return Err(Error::Corrupt(format!("file of {} bytes is too short", bytes.len())));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Corrupt("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body_end = bytes.len() - CHECKSUM_LEN;
        if header_len > body_end - prefix {
            return Err(Error::Corrupt("header length exceeds file size".into()));
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[prefix..prefix + header_len])
            .map_err(|e| Error::Corrupt(format!("header: {e}")))?;

        let payload = &bytes[prefix + header_len..body_end];
        let expected: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if payload.len() != expected * 8 {
            return Err(Error::Corrupt(format!(
                "payload holds {} bytes, header describes {}",
                payload.len(),
                expected * 8
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut params = ParameterStore::new();
        for entry in header.params {
            let len = entry.shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(len).collect();
            params.add(entry.name, Array::new(entry.shape, data)?)?;
        }
        let ckpt = Checkpoint {
            config: header.config,
            vocab: header.vocab,
            params,
            step: header.step,
        };
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
