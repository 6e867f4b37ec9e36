//! Binary checkpoint format.
//!
//! ```text
//! b"NPT1" | u64 LE header length L | L bytes UTF-8 JSON header | f32 LE payload
//! ```
//!
//! The header is `{version, widths, variant, seed, tensors: [{name, shape,
//! offset, count}]}`; `offset` and `count` are in f32 elements from the start
//! of the payload, and tensors appear in header order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{param_layout, ModelConfig, ModelParams, Variant, Widths, NORM_EPS};
use crate::tensor::{Real, Shape, Tensor3};

pub const MAGIC: &[u8; 4] = b"NPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected \"NPT1\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("truncated checkpoint: {what} needs {needed} bytes, {available} available")]
    Truncated {
        what: &'static str,
        needed: u64,
        available: u64,
    },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("shape mismatch for layer `{name}`: header says {found}, config expects {expected}")]
    ShapeMismatch {
        name: String,
        expected: Shape,
        found: Shape,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 3],
    offset: u64,
    count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    widths: [usize; 5],
    variant: Variant,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

/// Encodes parameters (stored as f32) and configuration into checkpoint bytes.
pub fn encode<T: Real>(params: &ModelParams<T>, cfg: &ModelConfig) -> Vec<u8> {
    let mut offset = 0u64;
    let tensors = params
        .iter()
        .map(|(name, t)| {
            let count = t.data().len() as u64;
            let e = TensorEntry {
                name: name.to_owned(),
                shape: t.shape().as_array(),
                offset,
                count,
            };
            offset += count;
            e
        })
        .collect();
    let header = Header {
        version: VERSION,
        widths: cfg.widths.as_array(),
        variant: cfg.variant,
        seed: cfg.seed,
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + offset as usize * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for &x in t.data() {
            let f = x.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    out
}

/// Decodes checkpoint bytes, validating every tensor against the layout the
/// header's configuration implies.
pub fn decode(bytes: &[u8]) -> Result<(ModelParams<f32>, ModelConfig), CheckpointError> {
    let available = bytes.len() as u64;
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated {
            what: "magic",
            needed: 4,
            available,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated {
            what: "header length",
            needed: 12,
            available,
        });
    }
    let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let header_end = 12u64.saturating_add(len);
    if header_end > available {
        return Err(CheckpointError::Truncated {
            what: "header",
            needed: header_end,
            available,
        });
    }
    let header_bytes = &bytes[12..header_end as usize];
    let raw: serde_json::Value =
        serde_json::from_slice(header_bytes).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let widths = Widths::from_array(header.widths).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let cfg = ModelConfig {
        widths,
        variant: header.variant,
        eps: NORM_EPS,
        seed: header.seed,
    };

    let layout = param_layout(&cfg);
    if layout.len() != header.tensors.len() {
        return Err(CheckpointError::Header(format!(
            "{} tensors listed, configuration needs {}",
            header.tensors.len(),
            layout.len()
        )));
    }
    let payload = &bytes[header_end as usize..];
    let mut entries = Vec::with_capacity(layout.len());
    for (spec, entry) in layout.iter().zip(&header.tensors) {
        if spec.name != entry.name {
            return Err(CheckpointError::Header(format!(
                "expected tensor `{}`, found `{}`",
                spec.name, entry.name
            )));
        }
        let found = Shape::new(entry.shape[0], entry.shape[1], entry.shape[2]);
        if found != spec.shape || entry.count != found.len() as u64 {
            return Err(CheckpointError::ShapeMismatch {
                name: entry.name.clone(),
                expected: spec.shape,
                found,
            });
        }
        let start = entry.offset.saturating_mul(4);
        let end = start.saturating_add(entry.count.saturating_mul(4));
        if end > payload.len() as u64 {
            return Err(CheckpointError::Truncated {
                what: "payload",
                needed: end,
                available: payload.len() as u64,
            });
        }
        let data = payload[start as usize..end as usize]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor3::new(found, data).map_err(|e| CheckpointError::Header(e.to_string()))?;
        entries.push((entry.name.clone(), t));
    }
    let params = ModelParams::from_entries(entries).map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok((params, cfg))
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    };
    let bytes = encode(params, cfg);
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams<f32>, ModelConfig), CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode(&bytes)
}

/// Loads a checkpoint and requires it to match `expected`'s architecture.
pub fn load_checkpoint_for(
    path: impl AsRef<Path>,
    expected: &ModelConfig,
) -> Result<(ModelParams<f32>, ModelConfig), CheckpointError> {
    let (params, cfg) = load_checkpoint(path)?;
    for spec in param_layout(expected) {
        let found = params.get(&spec.name).map(Tensor3::shape);
        if found != Some(spec.shape) {
            return Err(CheckpointError::ShapeMismatch {
                name: spec.name,
                expected: spec.shape,
                found: found.unwrap_or(Shape::new(0, 0, 0)),
            });
        }
    }
    if cfg.variant != expected.variant {
        return Err(CheckpointError::Header(format!(
            "checkpoint variant {} differs from expected {}",
            cfg.variant, expected.variant
        )));
    }
    Ok((params, cfg))
}
