//! The 1-5 masked-color evaluation grid.

use super::cond::ConditionEmbedding;
use super::math::Scalar;
use super::model::{apply_masking, predict_mask_codes};
use super::params::McmParams;
use super::train::TrainExample;
use super::{mix_seed, McmError};
use crate::color::{dequantize, tokenize_palette, ColorCode, Palette, Token, TokenSequence};
use crate::metrics::dccw;

/// Anything that can fill `[MASK]` positions with color codes.
pub trait MaskPredictor {
    /// Sequence length inputs are tokenized to.
    fn seq_len(&self) -> usize;

    /// Predicted `(position, code)` pairs for every `[MASK]` position,
    /// ascending by position.
    fn predict(
        &self,
        masked: &TokenSequence,
        cond: Option<&ConditionEmbedding>,
    ) -> Result<Vec<(usize, ColorCode)>, McmError>;
}

impl<F: Scalar> MaskPredictor for McmParams<F> {
    fn seq_len(&self) -> usize {
        self.config.seq_len
    }

    fn predict(
        &self,
        masked: &TokenSequence,
        cond: Option<&ConditionEmbedding>,
    ) -> Result<Vec<(usize, ColorCode)>, McmError> {
        predict_mask_codes(self, masked, cond)
    }
}

/// Oracle predictor: identifies the example by its condition embedding
/// when one is present (falling back to the first palette consistent with
/// the visible colors) and answers with the true codes. Establishes the
/// accuracy ceiling and the quantization-only DCCW floor in tests.
pub struct PerfectPredictor {
    entries: Vec<(Option<ConditionEmbedding>, Vec<ColorCode>)>,
    seq_len: usize,
}

impl PerfectPredictor {
    pub fn new(examples: &[TrainExample], seq_len: usize) -> Self {
        Self {
            entries: examples
                .iter()
                .map(|ex| (ex.cond.clone(), ex.palette.codes()))
                .collect(),
            seq_len,
        }
    }
}

impl MaskPredictor for PerfectPredictor {
    fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn predict(
        &self,
        masked: &TokenSequence,
        cond: Option<&ConditionEmbedding>,
    ) -> Result<Vec<(usize, ColorCode)>, McmError> {
        let tokens = masked.tokens();
        let matches = |codes: &[ColorCode]| {
            tokens.iter().skip(1).zip(codes).all(|(t, c)| match t {
                Token::Color(code) => code == c,
                Token::Mask => true,
                _ => false,
            })
        };
        let candidate = self
            .entries
            .iter()
            .filter(|(entry_cond, _)| cond.is_none() || entry_cond.as_ref() == cond)
            .map(|(_, codes)| codes)
            .find(|codes| tokens.len() >= codes.len() + 2 && matches(codes))
            .ok_or_else(|| McmError::ShapeMismatch("no palette matches the sequence".into()))?;
        Ok(tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == Token::Mask)
            .map(|(pos, _)| (pos, candidate[pos - 1]))
            .collect())
    }
}

/// One row of the masked-prediction grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub n_mask: usize,
    /// Mean accuracy@1 over masked positions, in `[0, 1]`.
    pub accuracy: f64,
    /// Mean DCCW between the greedily completed palette and ground truth.
    pub mean_dccw: f64,
}

/// Masks 1 through 5 colors of every (5-color) dataset palette under each
/// seed, predicts greedily, and reports mean accuracy@1 and mean DCCW per
/// mask count. Fully deterministic in `(dataset order, seeds)`.
pub fn evaluate_grid<P: MaskPredictor + ?Sized>(
    predictor: &P,
    dataset: &[TrainExample],
    seeds: &[u64],
) -> Result<Vec<EvalRow>, McmError> {
    if dataset.is_empty() {
        return Err(McmError::EmptyDataset);
    }
    if seeds.is_empty() {
        return Err(McmError::InvalidConfig("at least one seed required".into()));
    }
    for ex in dataset {
        if ex.palette.len() != 5 {
            return Err(McmError::ShapeMismatch(format!(
                "evaluation palettes must have 5 colors, got {}",
                ex.palette.len()
            )));
        }
    }

    let tokenized: Vec<TokenSequence> = dataset
        .iter()
        .map(|ex| tokenize_palette(&ex.palette, predictor.seq_len()))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(5);
    for n_mask in 1..=5usize {
        let mut hits = 0usize;
        let mut positions = 0usize;
        let mut dccw_sum = 0.0f64;
        let mut palettes = 0usize;
        for &seed in seeds {
            for (i, ex) in dataset.iter().enumerate() {
                let mask_seed = mix_seed(mix_seed(seed, i as u64), n_mask as u64);
                let (masked, targets) = apply_masking(&tokenized[i], n_mask, mask_seed)?;
                let predicted = predictor.predict(&masked, ex.cond.as_ref())?;
                debug_assert_eq!(predicted.len(), targets.len());

                let mut colors = ex.palette.colors().to_vec();
                for ((pos, pred), (tpos, target)) in predicted.iter().zip(&targets) {
                    debug_assert_eq!(pos, tpos);
                    hits += usize::from(pred == target);
                    positions += 1;
                    colors[pos - 1] = dequantize(*pred);
                }
                let completed = Palette::new(colors).expect("palette length preserved");
                dccw_sum += dccw(&completed, &ex.palette)
                    .expect("5-color palettes are within the DCCW limit");
                palettes += 1;
            }
        }
        rows.push(EvalRow {
            n_mask,
            accuracy: hits as f64 / positions as f64,
            mean_dccw: dccw_sum / palettes as f64,
        });
    }
    Ok(rows)
}
