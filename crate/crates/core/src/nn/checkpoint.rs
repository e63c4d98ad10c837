//! Checkpoint serialization: JSON metadata with base64-encoded
//! little-endian f64 tensor payloads (bit-exact and compact).

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::atomic_write;

use super::optim::ParamStore;
use super::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: String,
    pub adam_m: String,
    pub adam_v: String,
}

/// Named parameter tensors plus architecture metadata and format version.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: serde_json::Value,
    pub adam_step: u64,
    pub params: Vec<TensorRecord>,
}

fn encode(data: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode(text: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = B64.decode(text).map_err(|e| Error::Parse {
        what: what.to_string(),
        detail: format!("base64: {e}"),
    })?;
    if bytes.len() != expected * 8 {
        return Err(Error::Parse {
            what: what.to_string(),
            detail: format!("expected {} bytes, got {}", expected * 8, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl Checkpoint {
    pub fn from_store(architecture: serde_json::Value, store: &ParamStore) -> Checkpoint {
        let params = store
            .entries()
            .iter()
            .map(|e| TensorRecord {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                value: encode(e.value.data()),
                adam_m: encode(e.adam_m.data()),
                adam_v: encode(e.adam_v.data()),
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            architecture,
            adam_step: store.step(),
            params,
        }
    }

    /// Rebuilds the parameter store, including optimizer state.
    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for rec in &self.params {
            let len: usize = rec.shape.iter().product();
            let value = Tensor::new(rec.shape.clone(), decode(&rec.value, len, &rec.name)?)?;
            store.insert(&rec.name, value)?;
            let m = Tensor::new(rec.shape.clone(), decode(&rec.adam_m, len, &rec.name)?)?;
            let v = Tensor::new(rec.shape.clone(), decode(&rec.adam_v, len, &rec.name)?)?;
            store.set_adam_state(&rec.name, m, v)?;
        }
        store.set_step(self.adam_step);
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::Parse {
            what: path.display().to_string(),
            detail: e.to_string(),
        })?;
        atomic_write(path, &json)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            what: path.display().to_string(),
            detail: e.to_string(),
        })?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::Parse {
                what: path.display().to_string(),
                detail: format!(
                    "unsupported checkpoint format version {} (expected {FORMAT_VERSION})",
                    ckpt.format_version
                ),
            });
        }
        Ok(ckpt)
    }
}
