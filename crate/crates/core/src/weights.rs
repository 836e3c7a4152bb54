//! Versioned weights file.
//!
//! Layout: the 4-byte magic `P3DW`, one version byte, a little-endian `u32`
//! header length, a JSON header (architecture plus `name`/`dtype`/`shape` per
//! entry), then every tensor's raw little-endian elements in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ArchitectureConfig, NetworkParams};
use crate::tensor::{Dtype, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"P3DW";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    architecture: ArchitectureConfig,
    entries: Vec<Entry>,
}

pub fn encode<T: Scalar>(params: &NetworkParams<T>) -> Vec<u8> {
    let header = Header {
        architecture: params.config.clone(),
        entries: params
            .named()
            .into_iter()
            .map(|(name, t)| Entry {
                name,
                dtype: T::DTYPE,
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let payload_len: usize = params.tensors().iter().map(|t| t.len() * T::DTYPE.size_of()).sum();
    let mut out = Vec::with_capacity(9 + header.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in params.tensors() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

/// Decode a weights blob. With `expected`, every entry must match the shapes
/// that architecture produces; mismatches name the offending layer.
pub fn decode<T: Scalar>(bytes: &[u8], expected: Option<&ArchitectureConfig>) -> Result<NetworkParams<T>> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let header_bytes = bytes
        .get(9..9 + header_len)
        .ok_or_else(|| Error::Format("header extends past end of file".into()))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| Error::Format(format!("header: {e}")))?;

    let config = expected.unwrap_or(&header.architecture);
    let shapes = config.param_shapes().map_err(|e| Error::Format(format!("architecture: {e}")))?;
    if header.entries.len() != shapes.len() {
        return Err(Error::Format(format!(
            "file has {} entries, architecture needs {}",
            header.entries.len(),
            shapes.len()
        )));
    }
    for (entry, (name, shape)) in header.entries.iter().zip(&shapes) {
        if &entry.name != name {
            return Err(Error::Format(format!("entry {} found where {name} was expected", entry.name)));
        }
        if &entry.shape != shape {
            return Err(Error::mismatch(format!("layer {name}"), shape, &entry.shape));
        }
    }

    let payload = &bytes[9 + header_len..];
    let needed: usize = header
        .entries
        .iter()
        .map(|e| e.shape.iter().product::<usize>() * e.dtype.size_of())
        .sum();
    if payload.len() < needed {
        return Err(Error::Truncated {
            expected: needed,
            found: payload.len(),
        });
    }
    if payload.len() > needed {
        return Err(Error::Format(format!("{} trailing bytes", payload.len() - needed)));
    }

    let mut offset = 0;
    let mut tensors = Vec::with_capacity(header.entries.len());
    for entry in &header.entries {
        let n: usize = entry.shape.iter().product();
        let width = entry.dtype.size_of();
        let raw = &payload[offset..offset + n * width];
        offset += n * width;
        let data: Vec<T> = match entry.dtype {
            d if d == T::DTYPE => raw.chunks_exact(width).map(T::read_le).collect(),
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f64::from(f32::read_le(c))))
                .collect(),
            Dtype::F64 => raw.chunks_exact(8).map(|c| T::from_f64_lossy(f64::read_le(c))).collect(),
        };
        tensors.push(Tensor::from_vec(&entry.shape, data)?);
    }
    NetworkParams::from_tensors(config, tensors)
}

pub fn save_weights<T: Scalar>(params: &NetworkParams<T>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, encode(params)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_weights<T: Scalar>(path: &Path, expected: Option<&ArchitectureConfig>) -> Result<NetworkParams<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes, expected)
}

/// Architecture and element type stored in a weights file, without the payload.
pub fn peek_header(bytes: &[u8]) -> Result<(ArchitectureConfig, Dtype)> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let header: Header = bytes
        .get(9..9 + header_len)
        .ok_or_else(|| Error::Format("header extends past end of file".into()))
        .and_then(|h| serde_json::from_slice(h).map_err(|e| Error::Format(format!("header: {e}"))))?;
    let dtype = header.entries.first().map(|e| e.dtype).unwrap_or_default();
    Ok((header.architecture, dtype))
}
