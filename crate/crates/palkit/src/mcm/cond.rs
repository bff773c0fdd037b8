//! Condition embeddings and their PTEB file container.
//!
//! The model never runs a text or image encoder itself; conditions arrive
//! as `S x D` float matrices, either produced by external encoder scripts
//! or by the deterministic stub encoder used in tests and toy pipelines.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::McmError;

const PTEB_MAGIC: &[u8; 4] = b"PTEB";
const PTEB_VERSION: u8 = 1;

/// An `S x D` matrix of encoder features, row-major `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl ConditionEmbedding {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, McmError> {
        if rows == 0 || cols == 0 {
            return Err(McmError::ShapeMismatch(
                "condition embedding must have at least one row and column".into(),
            ));
        }
        if data.len() != rows * cols {
            return Err(McmError::ShapeMismatch(format!(
                "condition data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(McmError::ShapeMismatch(
                "condition embedding contains non-finite values".into(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

/// FNV-1a, the stable 64-bit string hash seeding the stub encoder.
fn fnv1a_64(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic stand-in for an external text/image encoder: hashes the
/// string and expands it into an `S x D` matrix with entries in `[-1, 1]`.
/// Identical strings always produce identical matrices.
pub fn stub_condition_encoder(text_or_id: &str, rows: usize, cols: usize) -> ConditionEmbedding {
    assert!(rows >= 1 && cols >= 1, "stub encoder needs S, D >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a_64(text_or_id));
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-1.0f32..=1.0))
        .collect();
    ConditionEmbedding {
        rows,
        cols,
        data,
    }
}

/// Writes the PTEB container: magic, version byte, LE u32 rows/cols, then
/// row-major LE f32 data.
pub fn write_pteb(path: &Path, emb: &ConditionEmbedding) -> Result<(), McmError> {
    let mut out = Vec::with_capacity(13 + emb.data.len() * 4);
    out.extend_from_slice(PTEB_MAGIC);
    out.push(PTEB_VERSION);
    out.extend_from_slice(&(emb.rows as u32).to_le_bytes());
    out.extend_from_slice(&(emb.cols as u32).to_le_bytes());
    for v in &emb.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn read_pteb(path: &Path) -> Result<ConditionEmbedding, McmError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 13 {
        return Err(McmError::Format("PTEB file truncated".into()));
    }
    if &bytes[0..4] != PTEB_MAGIC {
        return Err(McmError::Format("bad PTEB magic".into()));
    }
    if bytes[4] != PTEB_VERSION {
        return Err(McmError::Version(format!("PTEB version {}", bytes[4])));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let expected = 13 + rows * cols * 4;
    if bytes.len() != expected {
        return Err(McmError::Format(format!(
            "PTEB payload is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let data = bytes[13..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ConditionEmbedding::new(rows, cols, data)
}
