//! Parameter tensors, initialization, and uniform traversal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::McmConfig;
use super::math::{Mat, Scalar};
use super::McmError;

/// Layer-norm scale and offset.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<F> {
    pub scale: Vec<F>,
    pub offset: Vec<F>,
}

/// Self-attention projections; weights are `(in, out)` row-major, applied
/// as `x @ W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams<F> {
    pub wq: Mat<F>,
    pub bq: Vec<F>,
    pub wk: Mat<F>,
    pub bk: Vec<F>,
    pub wv: Mat<F>,
    pub bv: Vec<F>,
    pub wo: Mat<F>,
    pub bo: Vec<F>,
}

/// Cross-attention: queries from token states, keys/values projected from
/// the `cond_dim`-wide condition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttnParams<F> {
    pub norm: NormParams<F>,
    pub wq: Mat<F>,
    pub bq: Vec<F>,
    pub wk: Mat<F>,
    pub bk: Vec<F>,
    pub wv: Mat<F>,
    pub bv: Vec<F>,
    pub wo: Mat<F>,
    pub bo: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams<F> {
    pub w1: Mat<F>,
    pub b1: Vec<F>,
    pub w2: Mat<F>,
    pub b2: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub ln1: NormParams<F>,
    pub attn: AttnParams<F>,
    pub cross: Option<CrossAttnParams<F>>,
    pub ln2: NormParams<F>,
    pub ffn: FfnParams<F>,
}

/// All learnable tensors of the masked color model, together with the
/// configuration that fixes their shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct McmParams<F> {
    pub config: McmConfig,
    pub token_emb: Mat<F>,
    pub pos_emb: Mat<F>,
    pub layers: Vec<LayerParams<F>>,
    pub final_norm: NormParams<F>,
    pub head_w: Mat<F>,
    pub head_b: Vec<F>,
}

fn uniform_mat<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Mat<F> {
    let scale = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| F::from_f64(rng.gen_range(-scale..scale)))
        .collect();
    Mat::from_vec(rows, cols, data)
}

fn identity_norm<F: Scalar>(dim: usize) -> NormParams<F> {
    NormParams {
        scale: vec![F::one(); dim],
        offset: vec![F::zero(); dim],
    }
}

fn zero_norm<F: Scalar>(dim: usize) -> NormParams<F> {
    NormParams {
        scale: vec![F::zero(); dim],
        offset: vec![F::zero(); dim],
    }
}

impl<F: Scalar> McmParams<F> {
    /// Deterministic initialization: linear weights uniform with scale
    /// `1/sqrt(fan_in)`, norms at identity, biases zero.
    pub fn init(config: McmConfig, seed: u64) -> Result<Self, McmError> {
        let config = config.validated()?;
        let d = config.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let attn = |rng: &mut ChaCha8Rng| AttnParams {
            wq: uniform_mat(rng, d, d, d),
            bq: vec![F::zero(); d],
            wk: uniform_mat(rng, d, d, d),
            bk: vec![F::zero(); d],
            wv: uniform_mat(rng, d, d, d),
            bv: vec![F::zero(); d],
            wo: uniform_mat(rng, d, d, d),
            bo: vec![F::zero(); d],
        };
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                ln1: identity_norm(d),
                attn: attn(&mut rng),
                cross: config.is_conditioned().then(|| CrossAttnParams {
                    norm: identity_norm(d),
                    wq: uniform_mat(&mut rng, d, d, d),
                    bq: vec![F::zero(); d],
                    wk: uniform_mat(&mut rng, config.cond_dim, d, config.cond_dim),
                    bk: vec![F::zero(); d],
                    wv: uniform_mat(&mut rng, config.cond_dim, d, config.cond_dim),
                    bv: vec![F::zero(); d],
                    wo: uniform_mat(&mut rng, d, d, d),
                    bo: vec![F::zero(); d],
                }),
                ln2: identity_norm(d),
                ffn: FfnParams {
                    w1: uniform_mat(&mut rng, d, config.d_ff, d),
                    b1: vec![F::zero(); config.d_ff],
                    w2: uniform_mat(&mut rng, config.d_ff, d, config.d_ff),
                    b2: vec![F::zero(); d],
                },
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            token_emb: uniform_mat(&mut rng, config.vocab_size, d, d),
            pos_emb: uniform_mat(&mut rng, config.seq_len, d, d),
            layers,
            final_norm: identity_norm(d),
            head_w: uniform_mat(&mut rng, d, config.vocab_size, d),
            head_b: vec![F::zero(); config.vocab_size],
        })
    }

    /// All-zero tensors with the same shapes; the gradient and Adam moment
    /// container.
    pub fn zeros(config: &McmConfig) -> Self {
        let d = config.d_model;
        let attn = || AttnParams {
            wq: Mat::zeros(d, d),
            bq: vec![F::zero(); d],
            wk: Mat::zeros(d, d),
            bk: vec![F::zero(); d],
            wv: Mat::zeros(d, d),
            bv: vec![F::zero(); d],
            wo: Mat::zeros(d, d),
            bo: vec![F::zero(); d],
        };
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                ln1: zero_norm(d),
                attn: attn(),
                cross: config.is_conditioned().then(|| CrossAttnParams {
                    norm: zero_norm(d),
                    wq: Mat::zeros(d, d),
                    bq: vec![F::zero(); d],
                    wk: Mat::zeros(config.cond_dim, d),
                    bk: vec![F::zero(); d],
                    wv: Mat::zeros(config.cond_dim, d),
                    bv: vec![F::zero(); d],
                    wo: Mat::zeros(d, d),
                    bo: vec![F::zero(); d],
                }),
                ln2: zero_norm(d),
                ffn: FfnParams {
                    w1: Mat::zeros(d, config.d_ff),
                    b1: vec![F::zero(); config.d_ff],
                    w2: Mat::zeros(config.d_ff, d),
                    b2: vec![F::zero(); d],
                },
            })
            .collect();
        Self {
            config: config.clone(),
            token_emb: Mat::zeros(config.vocab_size, d),
            pos_emb: Mat::zeros(config.seq_len, d),
            layers,
            final_norm: zero_norm(d),
            head_w: Mat::zeros(d, config.vocab_size),
            head_b: vec![F::zero(); config.vocab_size],
        }
    }

    /// Named tensors in a fixed order (the checkpoint and traversal order).
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[F])> {
        let mut out: Vec<(String, Vec<usize>, &[F])> = vec![
            (
                "token_emb".into(),
                vec![self.token_emb.rows(), self.token_emb.cols()],
                self.token_emb.data(),
            ),
            (
                "pos_emb".into(),
                vec![self.pos_emb.rows(), self.pos_emb.cols()],
                self.pos_emb.data(),
            ),
        ];
        fn mat<F: Scalar>(name: String, m: &Mat<F>) -> (String, Vec<usize>, &[F]) {
            (name, vec![m.rows(), m.cols()], m.data())
        }
        fn vec1<F: Scalar>(name: String, v: &[F]) -> (String, Vec<usize>, &[F]) {
            (name, vec![v.len()], v)
        }
        for (i, layer) in self.layers.iter().enumerate() {
            out.push(vec1(format!("layers.{i}.ln1.scale"), &layer.ln1.scale));
            out.push(vec1(format!("layers.{i}.ln1.offset"), &layer.ln1.offset));
            out.push(mat(format!("layers.{i}.attn.wq"), &layer.attn.wq));
            out.push(vec1(format!("layers.{i}.attn.bq"), &layer.attn.bq));
            out.push(mat(format!("layers.{i}.attn.wk"), &layer.attn.wk));
            out.push(vec1(format!("layers.{i}.attn.bk"), &layer.attn.bk));
            out.push(mat(format!("layers.{i}.attn.wv"), &layer.attn.wv));
            out.push(vec1(format!("layers.{i}.attn.bv"), &layer.attn.bv));
            out.push(mat(format!("layers.{i}.attn.wo"), &layer.attn.wo));
            out.push(vec1(format!("layers.{i}.attn.bo"), &layer.attn.bo));
            if let Some(cross) = &layer.cross {
                out.push(vec1(format!("layers.{i}.cross.norm.scale"), &cross.norm.scale));
                out.push(vec1(format!("layers.{i}.cross.norm.offset"), &cross.norm.offset));
                out.push(mat(format!("layers.{i}.cross.wq"), &cross.wq));
                out.push(vec1(format!("layers.{i}.cross.bq"), &cross.bq));
                out.push(mat(format!("layers.{i}.cross.wk"), &cross.wk));
                out.push(vec1(format!("layers.{i}.cross.bk"), &cross.bk));
                out.push(mat(format!("layers.{i}.cross.wv"), &cross.wv));
                out.push(vec1(format!("layers.{i}.cross.bv"), &cross.bv));
                out.push(mat(format!("layers.{i}.cross.wo"), &cross.wo));
                out.push(vec1(format!("layers.{i}.cross.bo"), &cross.bo));
            }
            out.push(vec1(format!("layers.{i}.ln2.scale"), &layer.ln2.scale));
            out.push(vec1(format!("layers.{i}.ln2.offset"), &layer.ln2.offset));
            out.push(mat(format!("layers.{i}.ffn.w1"), &layer.ffn.w1));
            out.push(vec1(format!("layers.{i}.ffn.b1"), &layer.ffn.b1));
            out.push(mat(format!("layers.{i}.ffn.w2"), &layer.ffn.w2));
            out.push(vec1(format!("layers.{i}.ffn.b2"), &layer.ffn.b2));
        }
        out.push((
            "final_norm.scale".into(),
            vec![self.final_norm.scale.len()],
            &self.final_norm.scale,
        ));
        out.push((
            "final_norm.offset".into(),
            vec![self.final_norm.offset.len()],
            &self.final_norm.offset,
        ));
        out.push((
            "head.w".into(),
            vec![self.head_w.rows(), self.head_w.cols()],
            self.head_w.data(),
        ));
        out.push(("head.b".into(), vec![self.head_b.len()], &self.head_b));
        out
    }

    /// Flat tensor views in [`Self::named_tensors`] order.
    pub fn flat_tensors(&self) -> Vec<&[F]> {
        self.named_tensors().into_iter().map(|(_, _, t)| t).collect()
    }

    /// Mutable flat tensor views in [`Self::named_tensors`] order.
    pub fn flat_tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = vec![self.token_emb.data_mut(), self.pos_emb.data_mut()];
        for layer in &mut self.layers {
            out.push(&mut layer.ln1.scale);
            out.push(&mut layer.ln1.offset);
            out.push(layer.attn.wq.data_mut());
            out.push(&mut layer.attn.bq);
            out.push(layer.attn.wk.data_mut());
            out.push(&mut layer.attn.bk);
            out.push(layer.attn.wv.data_mut());
            out.push(&mut layer.attn.bv);
            out.push(layer.attn.wo.data_mut());
            out.push(&mut layer.attn.bo);
            if let Some(cross) = &mut layer.cross {
                out.push(&mut cross.norm.scale);
                out.push(&mut cross.norm.offset);
                out.push(cross.wq.data_mut());
                out.push(&mut cross.bq);
                out.push(cross.wk.data_mut());
                out.push(&mut cross.bk);
                out.push(cross.wv.data_mut());
                out.push(&mut cross.bv);
                out.push(cross.wo.data_mut());
                out.push(&mut cross.bo);
            }
            out.push(&mut layer.ln2.scale);
            out.push(&mut layer.ln2.offset);
            out.push(layer.ffn.w1.data_mut());
            out.push(&mut layer.ffn.b1);
            out.push(layer.ffn.w2.data_mut());
            out.push(&mut layer.ffn.b2);
        }
        out.push(&mut self.final_norm.scale);
        out.push(&mut self.final_norm.offset);
        out.push(self.head_w.data_mut());
        out.push(&mut self.head_b);
        out
    }

    /// Total scalar parameter count.
    pub fn num_params(&self) -> usize {
        self.flat_tensors().iter().map(|t| t.len()).sum()
    }
}
