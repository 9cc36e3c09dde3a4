//! Binary checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "PVADCKPT"
//! 8       4     format version, u32 little-endian
//! 12      8     header length H, u64 little-endian
//! 20      H     UTF-8 JSON header (CheckpointHeader)
//! 20+H    ...   tensor payloads, little-endian scalars of `dtype`,
//!               concatenated in header order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PVADCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Byte offset into the payload section.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dtype: String,
    /// Free-form model description (architecture config, adapter settings).
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode<S: Scalar>(meta: serde_json::Value, params: &[&Param<S>]) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let tensors = params
        .iter()
        .map(|p| {
            let e = TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
                offset,
            };
            offset += (p.numel() * S::BYTES) as u64;
            e
        })
        .collect();
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        dtype: S::DTYPE.to_string(),
        meta,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

fn read_scalar<S: Scalar>(dtype: &str, bytes: &[u8]) -> S {
    match dtype {
        "f32" => S::lit(f32::read_le(bytes) as f64),
        _ => S::lit(f64::read_le(bytes)),
    }
}

/// Decodes a checkpoint, converting stored scalars to `S`.
pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<Param<S>>)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("missing magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[20..header_end])?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
    };
    let payload = &bytes[header_end..];
    let mut params = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * width;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!("tensor {} runs past end of file", e.name)));
        }
        let data = payload[start..end]
            .chunks_exact(width)
            .map(|c| read_scalar::<S>(&header.dtype, c))
            .collect();
        let mut p = Param::new(e.name.clone(), Tensor::from_vec(&e.shape, data)?);
        p.trainable = e.trainable;
        params.push(p);
    }
    Ok((header, params))
}

pub fn save<S: Scalar>(path: &Path, meta: serde_json::Value, params: &[&Param<S>]) -> Result<()> {
    let bytes = encode(meta, params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<S: Scalar>(path: &Path) -> Result<(CheckpointHeader, Vec<Param<S>>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Copies values from `source` into `target` by name, checking that every
/// target tensor is present with the same shape. Trainable flags follow the
/// stored ones.
pub fn assign_by_name<S: Scalar>(target: &mut [&mut Param<S>], source: &[Param<S>]) -> Result<()> {
    for t in target.iter_mut() {
        let s = source
            .iter()
            .find(|s| s.name == t.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", t.name)))?;
        if s.value.shape() != t.value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?}, model expects {:?}",
                t.name,
                s.value.shape(),
                t.value.shape()
            )));
        }
        t.value = s.value.clone();
        t.trainable = s.trainable;
    }
    Ok(())
}
