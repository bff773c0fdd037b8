//! The masked color model: a small pre-norm transformer over color tokens.
//!
//! Palettes are tokenized into `[PSTART] c1..ck [PEND] [PAD]...` sequences;
//! during training some color tokens are replaced by `[MASK]` and the model
//! is trained to predict the original codes at those positions. The
//! palette-only variant uses self-attention alone; the conditioned variant
//! adds cross-attention from token states to an externally produced
//! embedding matrix (text or image encoder output, ingested from PTEB
//! files).
//!
//! Forward and backward passes are written out by hand over a small dense
//! matrix type, generic over `f32`/`f64` so gradients can be verified with
//! finite differences at full double precision.

mod cond;
mod config;
mod eval;
mod io;
mod math;
mod model;
mod params;
mod train;

pub use cond::{read_pteb, stub_condition_encoder, write_pteb, ConditionEmbedding};
pub use config::{Conditioning, McmConfig, TrainConfig};
pub use eval::{evaluate_grid, EvalRow, MaskPredictor, PerfectPredictor};
pub use io::{load_checkpoint, save_checkpoint};
pub use math::{softmax_in_place, Mat, Scalar};
pub use model::{
    apply_masking, batch_loss, embed_palette, forward, loss_and_grads, predict_masked, BatchItem,
    PredictStrategy,
};
pub use params::{
    AttnParams, CrossAttnParams, FfnParams, LayerParams, McmParams, NormParams,
};
pub use train::{train, train_with_val_fn, TrainExample, TrainHistory};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum McmError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("conditioned model requires a condition embedding")]
    MissingCondition,
    #[error("palette-only model received a condition embedding")]
    UnexpectedCondition,
    #[error("cannot mask {asked} of {available} color tokens")]
    TooManyMasks { asked: usize, available: usize },
    #[error("input has no masked slots")]
    NoMaskedSlots,
    #[error("batch contains a sequence with no prediction targets")]
    EmptyTargets,
    #[error("dataset split is empty")]
    EmptyDataset,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("unsupported format version: {0}")]
    Version(String),
    #[error(transparent)]
    Color(#[from] crate::color::ColorError),
}

/// Stable seed derivation for independent RNG streams (splitmix64 step).
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
