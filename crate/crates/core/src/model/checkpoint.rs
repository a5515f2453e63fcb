//! Checkpoint container.
//!
//! Layout: the 8 magic bytes `EVYCKPT1`, a little-endian `u64` header
//! length, a JSON header, then every tensor of [`ModelParams::tensors`] as
//! little-endian `f64` values in that order (learnable tensors, then
//! batch-norm running statistics).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ModelConfig, ModelParams};
use crate::error::{Error, FormatError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EVYCKPT1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: Option<usize>,
    /// Named scalars such as losses; sorted so the header bytes are stable.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    #[serde(flatten)]
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(params: &ModelParams, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let tensors = params.tensors();
    let header = Header {
        config: params.config.clone(),
        meta: meta.clone(),
        tensors: tensors.iter().map(|(name, _, t)| TensorEntry { name: name.clone(), len: t.len() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let total: usize = tensors.iter().map(|(_, _, t)| t.len()).sum();
    let mut out = Vec::with_capacity(16 + json.len() + 8 * total);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in tensors {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams, CheckpointMeta)> {
    if bytes.len() < 16 {
        return Err(FormatError::Truncated { expected: 16, found: bytes.len() as u64 }.into());
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(FormatError::InvalidContent("not a checkpoint (bad magic)".into()).into());
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < header_len {
        return Err(FormatError::Truncated { expected: (16 + header_len) as u64, found: bytes.len() as u64 }.into());
    }
    let header: Header = serde_json::from_slice(&body[..header_len])?;
    let mut params = ModelParams::new(header.config.clone(), 0).map_err(|e| match e {
        Error::Precondition(m) => Error::Format(FormatError::InvalidContent(format!("checkpoint config: {m}"))),
        other => other,
    })?;
    let expected: Vec<(String, usize)> = params.tensors().iter().map(|(n, _, t)| (n.clone(), t.len())).collect();
    let found: Vec<(String, usize)> = header.tensors.iter().map(|e| (e.name.clone(), e.len)).collect();
    if expected != found {
        return Err(FormatError::InvalidContent("checkpoint tensor table does not match its config".into()).into());
    }
    let blob = &body[header_len..];
    let total: usize = expected.iter().map(|(_, n)| n).sum();
    if blob.len() != total * 8 {
        return Err(if blob.len() < total * 8 {
            FormatError::Truncated { expected: (16 + header_len + total * 8) as u64, found: bytes.len() as u64 }
        } else {
            FormatError::InvalidContent("trailing bytes after checkpoint tensors".into())
        }
        .into());
    }
    let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for (_, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok((params, header.meta))
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, meta: &CheckpointMeta, mut w: W) -> Result<()> {
    w.write_all(&encode_checkpoint(params, meta)?)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelParams, CheckpointMeta)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params, meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    decode_checkpoint(&std::fs::read(path)?)
}
