//! Adam training with early stopping on validation loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cond::ConditionEmbedding;
use super::config::{McmConfig, TrainConfig};
use super::math::Scalar;
use super::model::{apply_masking, batch_loss, loss_and_grads, predict_mask_codes, BatchItem};
use super::params::McmParams;
use super::{mix_seed, McmError};
use crate::color::{tokenize_palette, ColorCode, Palette, TokenSequence};

const SALT_INIT: u64 = 0x01;
const SALT_VAL_MASK: u64 = 0x02;
const SALT_SHUFFLE: u64 = 0x03;
const SALT_TRAIN_MASK: u64 = 0x04;
const SALT_DROPOUT: u64 = 0x05;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One dataset entry: a palette and, for conditioned variants, its
/// condition embedding.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub palette: Palette,
    pub cond: Option<ConditionEmbedding>,
}

/// Per-epoch curves; epochs are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

/// Adam optimizer state (first/second moments and step count).
pub struct AdamState<F> {
    m: McmParams<F>,
    v: McmParams<F>,
    t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(cfg: &McmConfig) -> Self {
        Self {
            m: McmParams::zeros(cfg),
            v: McmParams::zeros(cfg),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut McmParams<F>, grads: &McmParams<F>, lr: f64) {
        self.t += 1;
        let b1 = F::from_f64(ADAM_BETA1);
        let b2 = F::from_f64(ADAM_BETA2);
        let one_minus_b1 = F::from_f64(1.0 - ADAM_BETA1);
        let one_minus_b2 = F::from_f64(1.0 - ADAM_BETA2);
        let eps = F::from_f64(ADAM_EPS);
        let corr1 = F::from_f64(1.0 / (1.0 - ADAM_BETA1.powi(self.t as i32)));
        let corr2 = F::from_f64(1.0 / (1.0 - ADAM_BETA2.powi(self.t as i32)));
        let lr = F::from_f64(lr);

        let mut p_tensors = params.flat_tensors_mut();
        let mut m_tensors = self.m.flat_tensors_mut();
        let mut v_tensors = self.v.flat_tensors_mut();
        let g_tensors = grads.flat_tensors();
        for ((p, g), (m, v)) in p_tensors
            .iter_mut()
            .zip(&g_tensors)
            .zip(m_tensors.iter_mut().zip(v_tensors.iter_mut()))
        {
            for i in 0..p.len() {
                let grad = g[i];
                m[i] = b1 * m[i] + one_minus_b1 * grad;
                v[i] = b2 * v[i] + one_minus_b2 * grad * grad;
                let m_hat = m[i] * corr1;
                let v_hat = v[i] * corr2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Pre-masked view of an example, reused every epoch for validation.
struct MaskedExample {
    seq: TokenSequence,
    targets: Vec<(usize, ColorCode)>,
    cond: Option<ConditionEmbedding>,
}

fn sample_mask_count(rng: &mut ChaCha8Rng, tcfg: &TrainConfig, n_colors: usize) -> usize {
    let hi = tcfg.mask_max.min(n_colors);
    let lo = tcfg.mask_min.min(hi);
    rng.gen_range(lo..=hi)
}

fn mask_example(
    seq: &TokenSequence,
    cond: &Option<ConditionEmbedding>,
    tcfg: &TrainConfig,
    n_colors: usize,
    seed: u64,
) -> Result<MaskedExample, McmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_mask = sample_mask_count(&mut rng, tcfg, n_colors);
    let (masked, targets) = apply_masking(seq, n_mask, mix_seed(seed, 0x10))?;
    Ok(MaskedExample {
        seq: masked,
        targets,
        cond: cond.clone(),
    })
}

fn check_dataset_conditioning(cfg: &McmConfig, examples: &[TrainExample]) -> Result<(), McmError> {
    for ex in examples {
        match (cfg.is_conditioned(), &ex.cond) {
            (true, None) => return Err(McmError::MissingCondition),
            (false, Some(_)) => return Err(McmError::UnexpectedCondition),
            _ => {}
        }
    }
    Ok(())
}

/// Trains with a caller-supplied validation function, which receives the
/// current parameters and the 1-based epoch and returns
/// `(val_loss, val_accuracy)`. Used directly by tests to script validation
/// losses; [`train`] wires in the real evaluator.
pub fn train_with_val_fn<F, V>(
    cfg: McmConfig,
    tcfg: TrainConfig,
    train_set: &[TrainExample],
    mut val_fn: V,
) -> Result<(McmParams<F>, TrainHistory), McmError>
where
    F: Scalar,
    V: FnMut(&McmParams<F>, usize) -> (f64, f64),
{
    let cfg = cfg.validated()?;
    let tcfg = tcfg.validated()?;
    if train_set.is_empty() {
        return Err(McmError::EmptyDataset);
    }
    check_dataset_conditioning(&cfg, train_set)?;

    let tokenized: Vec<TokenSequence> = train_set
        .iter()
        .map(|ex| tokenize_palette(&ex.palette, cfg.seq_len))
        .collect::<Result<_, _>>()?;

    let mut params = McmParams::<F>::init(cfg.clone(), mix_seed(tcfg.seed, SALT_INIT))?;
    let mut adam = AdamState::new(&cfg);
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_accuracy: Vec::new(),
        best_epoch: 0,
    };
    let mut best_loss = f64::INFINITY;
    let mut best_params: Option<McmParams<F>> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=tcfg.max_epochs {
        let epoch_seed = mix_seed(tcfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(epoch_seed, SALT_SHUFFLE));
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle_rng.gen_range(0..=i));
        }

        let mut loss_sum = 0.0f64;
        let mut target_count = 0usize;
        for (batch_no, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let masked: Vec<MaskedExample> = chunk
                .iter()
                .map(|&i| {
                    mask_example(
                        &tokenized[i],
                        &train_set[i].cond,
                        &tcfg,
                        train_set[i].palette.len(),
                        mix_seed(mix_seed(epoch_seed, SALT_TRAIN_MASK), i as u64),
                    )
                })
                .collect::<Result<_, _>>()?;
            let batch: Vec<BatchItem<'_>> = masked
                .iter()
                .map(|m| BatchItem {
                    seq: &m.seq,
                    targets: &m.targets,
                    cond: m.cond.as_ref(),
                })
                .collect();
            let dropout_seed = mix_seed(mix_seed(epoch_seed, SALT_DROPOUT), batch_no as u64);
            let (loss, grads) = loss_and_grads(&params, &batch, Some(dropout_seed))?;
            adam.step(&mut params, &grads, tcfg.learning_rate);

            let n_targets: usize = masked.iter().map(|m| m.targets.len()).sum();
            loss_sum += loss.to_f64() * n_targets as f64;
            target_count += n_targets;
        }

        let (val_loss, val_accuracy) = val_fn(&params, epoch);
        history.train_loss.push(loss_sum / target_count as f64);
        history.val_loss.push(val_loss);
        history.val_accuracy.push(val_accuracy);

        if val_loss < best_loss {
            best_loss = val_loss;
            history.best_epoch = epoch;
            best_params = Some(params.clone());
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= tcfg.patience {
                break;
            }
        }
    }

    Ok((
        best_params.expect("at least one epoch ran and improved on infinity"),
        history,
    ))
}

/// Masked-token training: Adam over mean cross-entropy at masked positions,
/// stopping when validation loss has not improved for `patience` epochs and
/// returning the best-epoch parameters.
pub fn train<F: Scalar>(
    cfg: McmConfig,
    tcfg: TrainConfig,
    train_set: &[TrainExample],
    val_set: &[TrainExample],
) -> Result<(McmParams<F>, TrainHistory), McmError> {
    let cfg = cfg.validated()?;
    let tcfg_for_masks = tcfg.clone().validated()?;
    if val_set.is_empty() {
        return Err(McmError::EmptyDataset);
    }
    check_dataset_conditioning(&cfg, val_set)?;

    // Validation maskings are fixed across epochs so losses are comparable.
    let val_masked: Vec<MaskedExample> = val_set
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let seq = tokenize_palette(&ex.palette, cfg.seq_len)?;
            mask_example(
                &seq,
                &ex.cond,
                &tcfg_for_masks,
                ex.palette.len(),
                mix_seed(mix_seed(tcfg_for_masks.seed, SALT_VAL_MASK), i as u64),
            )
        })
        .collect::<Result<_, _>>()?;

    let val_fn = |params: &McmParams<F>, _epoch: usize| -> (f64, f64) {
        let batch: Vec<BatchItem<'_>> = val_masked
            .iter()
            .map(|m| BatchItem {
                seq: &m.seq,
                targets: &m.targets,
                cond: m.cond.as_ref(),
            })
            .collect();
        let loss = batch_loss(params, &batch, None)
            .expect("validation batch was validated at construction")
            .to_f64();
        let mut hits = 0usize;
        let mut total = 0usize;
        for m in &val_masked {
            let preds = predict_mask_codes(params, &m.seq, m.cond.as_ref())
                .expect("validation forward cannot fail after batch_loss");
            for ((_, predicted), (_, target)) in preds.iter().zip(&m.targets) {
                hits += usize::from(predicted == target);
                total += 1;
            }
        }
        (loss, hits as f64 / total as f64)
    };

    train_with_val_fn(cfg, tcfg, train_set, val_fn)
}
