//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `GCVTCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header, then every tensor
//! as little-endian `f64` values in header order. Values are stored bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::GcVit;
use super::params::Parameters;
use crate::config::ModelConfig;
use crate::data::augment::AugmentPolicy;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GCVTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub class_names: Vec<String>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub best_val_accuracy: Option<f64>,
    /// Echo of the training configuration that produced the weights.
    #[serde(default)]
    pub train_config: Option<serde_json::Value>,
    /// Preprocessing the weights were trained with, reused at inference.
    #[serde(default)]
    pub policy: Option<AugmentPolicy>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &GcVit, meta: &CheckpointMeta) -> Result<()> {
    let tensors = model.tensors();
    let header = Header {
        config: model.config.clone(),
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(20 + json.len() + 8 * model.num_parameters());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in &tensors {
        for v in t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(GcVit, CheckpointMeta)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a gcvit checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut model = GcVit::init(header.config.clone(), 0)?;
    let mut offset = 20 + hlen;
    {
        let mut slots = model.tensors_mut();
        if slots.len() != header.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors for this configuration, found {}",
                slots.len(),
                header.tensors.len()
            )));
        }
        for (slot, entry) in slots.iter_mut().zip(&header.tensors) {
            let count: usize = entry.shape.iter().product();
            if slot.name != entry.name || slot.data.len() != count {
                return Err(Error::Checkpoint(format!(
                    "tensor {} (shape {:?}) does not match model slot {}",
                    entry.name, entry.shape, slot.name
                )));
            }
            let raw = bytes
                .get(offset..offset + 8 * count)
                .ok_or_else(|| Error::Checkpoint(format!("truncated data for {}", entry.name)))?;
            for (dst, chunk) in slot.data.iter_mut().zip(raw.chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            offset += 8 * count;
        }
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok((model, header.meta))
}

pub fn save_checkpoint(path: &Path, model: &GcVit, meta: &CheckpointMeta) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, meta)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(GcVit, CheckpointMeta)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
