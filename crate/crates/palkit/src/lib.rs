//! Palette representation toolkit.
//!
//! `palkit` models a color palette as a short sequence of discrete *color
//! codes*: CIELAB points quantized into a 16x16x16 bin grid (4096 codes),
//! framed by `[PSTART]`/`[PEND]`/`[PAD]` special tokens. On top of that
//! vocabulary it provides:
//!
//! - [`color`]: CIELAB conversion, quantization, and palette tokenization.
//! - [`extract`]: K-means palette extraction from images.
//! - [`metrics`]: palette and image similarity measures (DCCW, Bhattacharyya
//!   histogram distance, PSNR, SSIM, masked-prediction accuracy).
//! - [`mcm`]: a small transformer trained with masked color modeling, either
//!   palette-only (self-attention) or conditioned on external text/image
//!   embeddings via cross-attention.
//! - [`dataset`]: palette-text-image manifest construction and 2D color
//!   distribution projections.

pub mod color;
pub mod dataset;
pub mod extract;
pub mod mcm;
pub mod metrics;

pub use color::{ColorCode, LabColor, Palette, SrgbColor, Token, TokenSequence};

