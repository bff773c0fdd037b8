use serde::{Deserialize, Serialize};

use super::McmError;
use crate::color::VOCAB_SIZE;

/// How the model ingests external context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    /// Palette-only: self-attention over color tokens.
    None,
    /// Cross-attention from token states to an external embedding matrix.
    Cross,
}

/// Architecture hyperparameters of the masked color model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub seq_len: usize,
    /// Always 4100: the 4096 color codes plus four special tokens.
    pub vocab_size: usize,
    pub conditioning: Conditioning,
    /// Width of ingested condition embeddings; 0 when unconditioned.
    pub cond_dim: usize,
    pub dropout: f64,
}

impl Default for McmConfig {
    fn default() -> Self {
        Self {
            d_model: 768,
            n_layers: 4,
            n_heads: 8,
            d_ff: 4 * 768,
            seq_len: 8,
            vocab_size: VOCAB_SIZE,
            conditioning: Conditioning::None,
            cond_dim: 0,
            dropout: 0.0,
        }
    }
}

impl McmConfig {
    /// Default palette-only configuration.
    pub fn palette_only() -> Self {
        Self::default()
    }

    /// Default configuration conditioned on `cond_dim`-wide embeddings.
    pub fn cross_conditioned(cond_dim: usize) -> Self {
        Self {
            conditioning: Conditioning::Cross,
            cond_dim,
            ..Self::default()
        }
    }

    /// Checks the config invariants, consuming and returning the config so
    /// construction sites can end with `.validated()?`.
    pub fn validated(self) -> Result<Self, McmError> {
        let fail = |msg: String| Err(McmError::InvalidConfig(msg));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 {
            return fail("n_layers must be at least 1".into());
        }
        if self.d_ff == 0 {
            return fail("d_ff must be at least 1".into());
        }
        if self.seq_len < 3 {
            return fail(format!("seq_len {} must be at least 3", self.seq_len));
        }
        if self.vocab_size != VOCAB_SIZE {
            return fail(format!(
                "vocab_size {} must be {VOCAB_SIZE}",
                self.vocab_size
            ));
        }
        let conditioned = self.conditioning == Conditioning::Cross;
        if conditioned != (self.cond_dim > 0) {
            return fail(format!(
                "cond_dim {} inconsistent with conditioning {:?}",
                self.cond_dim, self.conditioning
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        Ok(self)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn is_conditioned(&self) -> bool {
        self.conditioning == Conditioning::Cross
    }
}

/// Training schedule for [`super::train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    /// Per-example mask counts are drawn uniformly from
    /// `[mask_min, mask_max]`, capped by the palette's color count.
    pub mask_min: usize,
    pub mask_max: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 200,
            patience: 30,
            mask_min: 1,
            mask_max: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validated(self) -> Result<Self, McmError> {
        if self.patience == 0 {
            return Err(McmError::InvalidConfig("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(McmError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        if self.max_epochs == 0 {
            return Err(McmError::InvalidConfig(
                "max_epochs must be at least 1".into(),
            ));
        }
        if self.mask_min == 0 || self.mask_min > self.mask_max {
            return Err(McmError::InvalidConfig(format!(
                "mask range [{}, {}] is invalid",
                self.mask_min, self.mask_max
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(McmError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        Ok(self)
    }
}
