//! Versioned binary checkpoints.
//!
//! Layout: `"MCM1"` magic, little-endian u32 header length, a JSON header
//! (config plus named tensor shapes and byte offsets into the data
//! section), then the tensors as little-endian `f32`, concatenated in
//! header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::McmConfig;
use super::params::McmParams;
use super::McmError;

const MAGIC: &[u8; 4] = b"MCM1";

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the data section.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: McmConfig,
    tensors: Vec<TensorMeta>,
}

/// Writes a checkpoint; the round trip through [`load_checkpoint`] is
/// bit-exact.
pub fn save_checkpoint(params: &McmParams<f32>, path: &Path) -> Result<(), McmError> {
    let named = params.named_tensors();
    let mut tensors = Vec::with_capacity(named.len());
    let mut offset = 0usize;
    for (name, shape, data) in &named {
        tensors.push(TensorMeta {
            name: name.clone(),
            shape: shape.clone(),
            offset,
        });
        offset += data.len() * 4;
    }
    let header = Header {
        config: params.config.clone(),
        tensors,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| McmError::Format(e.to_string()))?;

    let mut out = Vec::with_capacity(8 + header_bytes.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, _, data) in &named {
        for v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<McmParams<f32>, McmError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(McmError::Format("checkpoint truncated".into()));
    }
    if &bytes[0..4] != MAGIC {
        if &bytes[0..3] == b"MCM" {
            return Err(McmError::Version(format!(
                "checkpoint magic {:?}",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        return Err(McmError::Format("bad checkpoint magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let data_start = 8 + header_len;
    if bytes.len() < data_start {
        return Err(McmError::Format("checkpoint header truncated".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[8..data_start])
        .map_err(|e| McmError::Format(format!("bad checkpoint header: {e}")))?;
    let config = header.config.validated()?;
    let data = &bytes[data_start..];

    let mut params = McmParams::<f32>::zeros(&config);
    let expected = params.named_tensors();
    if expected.len() != header.tensors.len() {
        return Err(McmError::Format(format!(
            "checkpoint has {} tensors, config implies {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let expected_meta: Vec<(String, Vec<usize>, usize)> = expected
        .iter()
        .map(|(name, shape, data)| (name.clone(), shape.clone(), data.len()))
        .collect();

    for (slice, ((name, shape, len), meta)) in params
        .flat_tensors_mut()
        .into_iter()
        .zip(expected_meta.iter().zip(&header.tensors))
    {
        if meta.name != *name || meta.shape != *shape {
            return Err(McmError::Format(format!(
                "tensor {} has shape {:?}, expected {} {:?}",
                meta.name, meta.shape, name, shape
            )));
        }
        let start = meta.offset;
        let end = start + len * 4;
        if end > data.len() {
            return Err(McmError::Format(format!(
                "tensor {} data out of bounds ({} > {})",
                name,
                end,
                data.len()
            )));
        }
        for (v, chunk) in slice.iter_mut().zip(data[start..end].chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(params)
}
