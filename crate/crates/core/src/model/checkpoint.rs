//! Checkpoint file: `u64` little-endian header length, a JSON header, then
//! every tensor as little-endian `f32` in header order.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{ModelParams, ParamKind};
use super::ModelConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: ParamKind,
    shape: [usize; 2],
    offset: usize,
    bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    /// Free-form information stored alongside the weights (task labels, ...).
    pub metadata: serde_json::Value,
}

pub fn checkpoint_bytes(
    config: &ModelConfig,
    params: &ModelParams,
    metadata: &serde_json::Value,
) -> Result<Vec<u8>> {
    let mut offset = 0;
    let tensors = params
        .tensors
        .iter()
        .map(|t| {
            let bytes = t.value.len() * 4;
            let e = TensorEntry {
                name: t.name.clone(),
                kind: t.kind,
                shape: [t.value.nrows(), t.value.ncols()],
                offset,
                bytes,
            };
            offset += bytes;
            e
        })
        .collect();
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: config.clone(),
        tensors,
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + offset);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &params.tensors {
        for v in t.value.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    params: &ModelParams,
    metadata: &serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(config, params, metadata)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| bad("truncated header length"))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let json = bytes
        .get(8..8 + header_len)
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json)?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let data = &bytes[8 + header_len..];
    let mut named = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let [rows, cols] = e.shape;
        if e.bytes != rows * cols * 4 {
            return Err(Error::Checkpoint(format!("{}: size does not match shape", e.name)));
        }
        let raw = data
            .get(e.offset..e.offset + e.bytes)
            .ok_or_else(|| Error::Checkpoint(format!("{}: data out of bounds", e.name)))?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let arr = Array2::from_shape_vec((rows, cols), values)
            .map_err(|err| Error::Checkpoint(err.to_string()))?;
        named.push((e.name.clone(), arr));
    }
    let params = ModelParams::from_named(&header.config, named)?;
    Ok(Checkpoint {
        config: header.config,
        params,
        metadata: header.metadata,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}
