//! Checkpoint files: `CHOIRCKP`, a little-endian `u64` header length, a JSON
//! header `{version, config, meta, tensors: [{name, shape, offset}]}`, then the
//! tensors as little-endian `f32` in directory order (offsets are bytes into
//! the data section).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, Real};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CHOIRCKP";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointFile {
    pub config: ModelConfig,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl CheckpointFile {
    pub fn new<T: Real>(config: &ModelConfig, params: &ModelParams<T>, meta: serde_json::Value) -> Self {
        let mut file = CheckpointFile {
            config: config.clone(),
            meta,
            tensors: Vec::new(),
        };
        file.push_params("", params);
        file
    }

    /// Appends every tensor of `params` under `prefix` + its usual name.
    pub fn push_params<T: Real>(&mut self, prefix: &str, params: &ModelParams<T>) {
        for (name, t) in params.named_tensors() {
            let values = t.iter().map(|v| v.to_f32().expect("finite")).collect();
            self.tensors.push((format!("{prefix}{name}"), t.shape().to_vec(), values));
        }
    }

    /// Parameters stored under `prefix` (empty for the model weights).
    pub fn params<T: Real>(&self, prefix: &str) -> Result<ModelParams<T>> {
        let map: HashMap<String, (Vec<usize>, Vec<T>)> = self
            .tensors
            .iter()
            .filter_map(|(n, shape, v)| {
                n.strip_prefix(prefix).map(|rest| {
                    (rest.to_string(), (shape.clone(), v.iter().map(|&x| T::of(f64::from(x))).collect()))
                })
            })
            .collect();
        ModelParams::from_named(&self.config, &map)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|(name, shape, values)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                    offset,
                };
                offset += 4 * values.len() as u64;
                e
            })
            .collect();
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, _, values) in &self.tensors {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let data_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..data_start])?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        header.config.validate()?;
        let data = &bytes[data_start..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 4 * n;
            if end > data.len() {
                return Err(Error::Checkpoint(format!("tensor {} runs past end of file", e.name)));
            }
            let values = data[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((e.name, e.shape, values));
        }
        Ok(CheckpointFile {
            config: header.config,
            meta: header.meta,
            tensors,
        })
    }
}

pub fn write_checkpoint(path: &Path, file: &CheckpointFile) -> Result<()> {
    std::fs::write(path, file.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointFile> {
    CheckpointFile::from_bytes(&std::fs::read(path)?)
}
