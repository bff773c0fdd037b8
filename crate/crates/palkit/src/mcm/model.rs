//! Forward pass, manual backpropagation, masking, and prediction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cond::ConditionEmbedding;
use super::math::{gelu, gelu_grad, softmax_in_place, Mat, Scalar};
use super::params::{McmParams, NormParams};
use super::{mix_seed, McmError};
use crate::color::{
    dequantize, quantize, ColorCode, LabColor, Palette, Token, TokenSequence, COLOR_CODES,
    MASK_INDEX,
};

const LN_EPS: f64 = 1e-5;

/// Decoding strategy for masked slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictStrategy {
    /// Fill every masked position simultaneously with its argmax code.
    Greedy,
}

/// One training example: a masked sequence, the original codes at the
/// masked positions, and an optional condition.
#[derive(Debug, Clone)]
pub struct BatchItem<'a> {
    pub seq: &'a TokenSequence,
    pub targets: &'a [(usize, ColorCode)],
    pub cond: Option<&'a ConditionEmbedding>,
}

pub(crate) struct NormTrace<F> {
    pub out: Mat<F>,
    mean: Vec<F>,
    rstd: Vec<F>,
}

struct AttnTrace<F> {
    q: Mat<F>,
    k: Mat<F>,
    v: Mat<F>,
    /// Per-head attention distributions, `S x S_k` each.
    probs: Vec<Mat<F>>,
    /// Concatenated head outputs before the output projection.
    concat: Mat<F>,
    /// Output after projection (pre-dropout).
    out: Mat<F>,
}

struct LayerTrace<F> {
    x_in: Mat<F>,
    ln1: NormTrace<F>,
    attn: AttnTrace<F>,
    attn_drop: Option<Mat<F>>,
    x_mid1: Mat<F>,
    cross: Option<(NormTrace<F>, AttnTrace<F>, Option<Mat<F>>)>,
    x_mid2: Mat<F>,
    ln2: NormTrace<F>,
    ffn_pre: Mat<F>,
    ffn_act: Mat<F>,
    ffn_drop: Option<Mat<F>>,
}

pub(crate) struct ForwardTrace<F> {
    token_idx: Vec<usize>,
    layers: Vec<LayerTrace<F>>,
    x_final: Mat<F>,
    pub(crate) final_ln: NormTrace<F>,
    pub(crate) logits: Mat<F>,
    cond: Option<Mat<F>>,
}

fn layer_norm<F: Scalar>(x: &Mat<F>, p: &NormParams<F>) -> NormTrace<F> {
    let (rows, cols) = (x.rows(), x.cols());
    let n = F::from_f64(cols as f64);
    let eps = F::from_f64(LN_EPS);
    let mut out = Mat::zeros(rows, cols);
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mut mean = F::zero();
        for v in row {
            mean = mean + *v;
        }
        mean = mean / n;
        let mut var = F::zero();
        for v in row {
            let d = *v - mean;
            var = var + d * d;
        }
        var = var / n;
        let rstd = F::one() / (var + eps).sqrt();
        let out_row = out.row_mut(r);
        for c in 0..cols {
            let xhat = (row[c] - mean) * rstd;
            out_row[c] = p.scale[c] * xhat + p.offset[c];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    NormTrace {
        out,
        mean: means,
        rstd: rstds,
    }
}

/// Returns the gradient w.r.t. the norm input and accumulates scale/offset
/// gradients.
fn layer_norm_backward<F: Scalar>(
    dout: &Mat<F>,
    x: &Mat<F>,
    trace: &NormTrace<F>,
    p: &NormParams<F>,
    dscale: &mut [F],
    doffset: &mut [F],
) -> Mat<F> {
    let (rows, cols) = (x.rows(), x.cols());
    let n = F::from_f64(cols as f64);
    let mut dx = Mat::zeros(rows, cols);
    for r in 0..rows {
        let (mean, rstd) = (trace.mean[r], trace.rstd[r]);
        let x_row = x.row(r);
        let d_row = dout.row(r);
        let mut sum_dxhat = F::zero();
        let mut sum_dxhat_xhat = F::zero();
        for c in 0..cols {
            let xhat = (x_row[c] - mean) * rstd;
            let dxhat = d_row[c] * p.scale[c];
            sum_dxhat = sum_dxhat + dxhat;
            sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
            dscale[c] = dscale[c] + d_row[c] * xhat;
            doffset[c] = doffset[c] + d_row[c];
        }
        let m1 = sum_dxhat / n;
        let m2 = sum_dxhat_xhat / n;
        let dx_row = dx.row_mut(r);
        for c in 0..cols {
            let xhat = (x_row[c] - mean) * rstd;
            let dxhat = d_row[c] * p.scale[c];
            dx_row[c] = rstd * (dxhat - m1 - xhat * m2);
        }
    }
    dx
}

fn head_columns<F: Scalar>(m: &Mat<F>, head: usize, dh: usize) -> Mat<F> {
    let mut out = Mat::zeros(m.rows(), dh);
    for r in 0..m.rows() {
        let src = &m.row(r)[head * dh..(head + 1) * dh];
        out.row_mut(r).copy_from_slice(src);
    }
    out
}

fn add_head_columns<F: Scalar>(dst: &mut Mat<F>, src: &Mat<F>, head: usize, dh: usize) {
    for r in 0..src.rows() {
        let dst_row = &mut dst.row_mut(r)[head * dh..(head + 1) * dh];
        for (d, s) in dst_row.iter_mut().zip(src.row(r)) {
            *d = *d + *s;
        }
    }
}

struct AttnWeights<'a, F> {
    wq: &'a Mat<F>,
    bq: &'a [F],
    wk: &'a Mat<F>,
    bk: &'a [F],
    wv: &'a Mat<F>,
    bv: &'a [F],
    wo: &'a Mat<F>,
    bo: &'a [F],
}

struct AttnGrads<'a, F> {
    wq: &'a mut Mat<F>,
    bq: &'a mut [F],
    wk: &'a mut Mat<F>,
    bk: &'a mut [F],
    wv: &'a mut Mat<F>,
    bv: &'a mut [F],
    wo: &'a mut Mat<F>,
    bo: &'a mut [F],
}

/// Multi-head scaled-dot attention. `key_mask[j] = true` removes key `j`
/// from every query's context.
fn attention_forward<F: Scalar>(
    q_in: &Mat<F>,
    kv_in: &Mat<F>,
    w: &AttnWeights<'_, F>,
    n_heads: usize,
    key_mask: Option<&[bool]>,
) -> AttnTrace<F> {
    let d_model = w.wq.cols();
    let dh = d_model / n_heads;
    let inv_sqrt_dh = F::from_f64(1.0 / (dh as f64).sqrt());

    let mut q = q_in.matmul(w.wq);
    q.add_bias(w.bq);
    let mut k = kv_in.matmul(w.wk);
    k.add_bias(w.bk);
    let mut v = kv_in.matmul(w.wv);
    v.add_bias(w.bv);

    let mut concat = Mat::zeros(q_in.rows(), d_model);
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = head_columns(&q, h, dh);
        let kh = head_columns(&k, h, dh);
        let vh = head_columns(&v, h, dh);
        let mut scores = qh.matmul_transpose(&kh);
        for r in 0..scores.rows() {
            let row = scores.row_mut(r);
            for (j, s) in row.iter_mut().enumerate() {
                *s = *s * inv_sqrt_dh;
                if key_mask.is_some_and(|m| m[j]) {
                    *s = F::neg_infinity();
                }
            }
            softmax_in_place(row);
        }
        let out_h = scores.matmul(&vh);
        add_head_columns(&mut concat, &out_h, h, dh);
        probs.push(scores);
    }
    let mut out = concat.matmul(w.wo);
    out.add_bias(w.bo);
    AttnTrace {
        q,
        k,
        v,
        probs,
        concat,
        out,
    }
}

/// Backward through [`attention_forward`]; returns gradients w.r.t. the
/// query-side and key/value-side inputs.
fn attention_backward<F: Scalar>(
    dout: &Mat<F>,
    q_in: &Mat<F>,
    kv_in: &Mat<F>,
    trace: &AttnTrace<F>,
    w: &AttnWeights<'_, F>,
    g: &mut AttnGrads<'_, F>,
    n_heads: usize,
) -> (Mat<F>, Mat<F>) {
    let d_model = w.wq.cols();
    let dh = d_model / n_heads;
    let inv_sqrt_dh = F::from_f64(1.0 / (dh as f64).sqrt());

    trace.concat.transpose_matmul_into(dout, g.wo);
    dout.col_sums_into(g.bo);
    let dconcat = dout.matmul_transpose(w.wo);

    let mut dq = Mat::zeros(trace.q.rows(), d_model);
    let mut dk = Mat::zeros(trace.k.rows(), d_model);
    let mut dv = Mat::zeros(trace.v.rows(), d_model);
    for h in 0..n_heads {
        let dout_h = head_columns(&dconcat, h, dh);
        let kh = head_columns(&trace.k, h, dh);
        let vh = head_columns(&trace.v, h, dh);
        let qh = head_columns(&trace.q, h, dh);
        let probs = &trace.probs[h];

        let mut dscores = dout_h.matmul_transpose(&vh);
        // Softmax backward per row, with the score scaling folded in.
        for r in 0..dscores.rows() {
            let p_row = probs.row(r);
            let ds_row = dscores.row_mut(r);
            let mut dot = F::zero();
            for (d, p) in ds_row.iter().zip(p_row) {
                dot = dot + *d * *p;
            }
            for (d, p) in ds_row.iter_mut().zip(p_row) {
                *d = *p * (*d - dot) * inv_sqrt_dh;
            }
        }

        let dvh = {
            let mut acc = Mat::zeros(vh.rows(), dh);
            probs.transpose_matmul_into(&dout_h, &mut acc);
            acc
        };
        let dqh = dscores.matmul(&kh);
        let dkh = {
            let mut acc = Mat::zeros(kh.rows(), dh);
            dscores.transpose_matmul_into(&qh, &mut acc);
            acc
        };
        add_head_columns(&mut dq, &dqh, h, dh);
        add_head_columns(&mut dk, &dkh, h, dh);
        add_head_columns(&mut dv, &dvh, h, dh);
    }

    q_in.transpose_matmul_into(&dq, g.wq);
    dq.col_sums_into(g.bq);
    kv_in.transpose_matmul_into(&dk, g.wk);
    dk.col_sums_into(g.bk);
    kv_in.transpose_matmul_into(&dv, g.wv);
    dv.col_sums_into(g.bv);

    let dq_in = dq.matmul_transpose(w.wq);
    let mut dkv_in = dk.matmul_transpose(w.wk);
    dkv_in.add_in_place(&dv.matmul_transpose(w.wv));
    (dq_in, dkv_in)
}

fn dropout_mask<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> Mat<F> {
    let keep = F::from_f64(1.0 / (1.0 - p));
    let data = (0..rows * cols)
        .map(|_| {
            if rng.gen_range(0.0..1.0) < p {
                F::zero()
            } else {
                keep
            }
        })
        .collect();
    Mat::from_vec(rows, cols, data)
}

fn apply_mask<F: Scalar>(x: &mut Mat<F>, mask: &Mat<F>) {
    for (v, m) in x.data_mut().iter_mut().zip(mask.data()) {
        *v = *v * *m;
    }
}

fn check_condition<F: Scalar>(
    params: &McmParams<F>,
    cond: Option<&ConditionEmbedding>,
) -> Result<(), McmError> {
    match (params.config.is_conditioned(), cond) {
        (true, None) => Err(McmError::MissingCondition),
        (false, Some(_)) => Err(McmError::UnexpectedCondition),
        (true, Some(c)) if c.cols() != params.config.cond_dim => {
            Err(McmError::ShapeMismatch(format!(
                "condition has {} columns, model expects {}",
                c.cols(),
                params.config.cond_dim
            )))
        }
        _ => Ok(()),
    }
}

pub(crate) fn forward_trace<F: Scalar>(
    params: &McmParams<F>,
    seq: &TokenSequence,
    cond: Option<&ConditionEmbedding>,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardTrace<F>, McmError> {
    let cfg = &params.config;
    if seq.is_empty() || seq.len() > cfg.seq_len {
        return Err(McmError::ShapeMismatch(format!(
            "sequence length {} not in [1, {}]",
            seq.len(),
            cfg.seq_len
        )));
    }
    check_condition(params, cond)?;

    let token_idx: Vec<usize> = seq.tokens().iter().map(|t| usize::from(t.index())).collect();
    let pad_mask: Vec<bool> = seq.tokens().iter().map(|t| t.is_pad()).collect();
    let s = token_idx.len();
    let d = cfg.d_model;

    let cond_mat = cond.map(|c| {
        let data = c.data().iter().map(|v| F::from_f64(f64::from(*v))).collect();
        Mat::from_vec(c.rows(), c.cols(), data)
    });

    let mut x = Mat::zeros(s, d);
    for (i, &tok) in token_idx.iter().enumerate() {
        let row = x.row_mut(i);
        for (c, (e, p)) in params
            .token_emb
            .row(tok)
            .iter()
            .zip(params.pos_emb.row(i))
            .enumerate()
        {
            row[c] = *e + *p;
        }
    }
    let p_drop = cfg.dropout;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for layer in &params.layers {
        let x_in = x.clone();
        let ln1 = layer_norm(&x_in, &layer.ln1);
        let attn = attention_forward(
            &ln1.out,
            &ln1.out,
            &AttnWeights {
                wq: &layer.attn.wq,
                bq: &layer.attn.bq,
                wk: &layer.attn.wk,
                bk: &layer.attn.bk,
                wv: &layer.attn.wv,
                bv: &layer.attn.bv,
                wo: &layer.attn.wo,
                bo: &layer.attn.bo,
            },
            cfg.n_heads,
            Some(&pad_mask),
        );
        let mut attn_out = attn.out.clone();
        let attn_drop = match dropout_rng.as_deref_mut() {
            Some(rng) if p_drop > 0.0 => {
                let mask = dropout_mask(rng, s, d, p_drop);
                apply_mask(&mut attn_out, &mask);
                Some(mask)
            }
            _ => None,
        };
        let mut x_mid1 = x_in.clone();
        x_mid1.add_in_place(&attn_out);

        let (cross, x_mid2) = match (&layer.cross, &cond_mat) {
            (Some(cross_params), Some(cm)) => {
                let lnc = layer_norm(&x_mid1, &cross_params.norm);
                let cattn = attention_forward(
                    &lnc.out,
                    cm,
                    &AttnWeights {
                        wq: &cross_params.wq,
                        bq: &cross_params.bq,
                        wk: &cross_params.wk,
                        bk: &cross_params.bk,
                        wv: &cross_params.wv,
                        bv: &cross_params.bv,
                        wo: &cross_params.wo,
                        bo: &cross_params.bo,
                    },
                    cfg.n_heads,
                    None,
                );
                let mut cross_out = cattn.out.clone();
                let cross_drop = match dropout_rng.as_deref_mut() {
                    Some(rng) if p_drop > 0.0 => {
                        let mask = dropout_mask(rng, s, d, p_drop);
                        apply_mask(&mut cross_out, &mask);
                        Some(mask)
                    }
                    _ => None,
                };
                let mut x_mid2 = x_mid1.clone();
                x_mid2.add_in_place(&cross_out);
                (Some((lnc, cattn, cross_drop)), x_mid2)
            }
            _ => (None, x_mid1.clone()),
        };

        let ln2 = layer_norm(&x_mid2, &layer.ln2);
        let mut ffn_pre = ln2.out.matmul(&layer.ffn.w1);
        ffn_pre.add_bias(&layer.ffn.b1);
        let mut ffn_act = ffn_pre.clone();
        for v in ffn_act.data_mut() {
            *v = gelu(*v);
        }
        let mut ffn_out = ffn_act.matmul(&layer.ffn.w2);
        ffn_out.add_bias(&layer.ffn.b2);
        let ffn_drop = match dropout_rng.as_deref_mut() {
            Some(rng) if p_drop > 0.0 => {
                let mask = dropout_mask(rng, s, d, p_drop);
                apply_mask(&mut ffn_out, &mask);
                Some(mask)
            }
            _ => None,
        };
        let mut x_out = x_mid2.clone();
        x_out.add_in_place(&ffn_out);

        layers.push(LayerTrace {
            x_in,
            ln1,
            attn,
            attn_drop,
            x_mid1,
            cross,
            x_mid2,
            ln2,
            ffn_pre,
            ffn_act,
            ffn_drop,
        });
        x = x_out;
    }

    let x_final = x;
    let final_ln = layer_norm(&x_final, &params.final_norm);
    let mut logits = final_ln.out.matmul(&params.head_w);
    logits.add_bias(&params.head_b);

    Ok(ForwardTrace {
        token_idx,
        layers,
        x_final,
        final_ln,
        logits,
        cond: cond_mat,
    })
}

/// Logits (`seq_len x vocab_size`) for one sequence, without dropout.
pub fn forward<F: Scalar>(
    params: &McmParams<F>,
    seq: &TokenSequence,
    cond: Option<&ConditionEmbedding>,
) -> Result<Mat<F>, McmError> {
    Ok(forward_trace(params, seq, cond, None)?.logits)
}

fn backward<F: Scalar>(
    params: &McmParams<F>,
    trace: &ForwardTrace<F>,
    dlogits: &Mat<F>,
    grads: &mut McmParams<F>,
) {
    let cfg = &params.config;

    trace
        .final_ln
        .out
        .transpose_matmul_into(dlogits, &mut grads.head_w);
    dlogits.col_sums_into(&mut grads.head_b);
    let dnf = dlogits.matmul_transpose(&params.head_w);
    let mut dx = layer_norm_backward(
        &dnf,
        &trace.x_final,
        &trace.final_ln,
        &params.final_norm,
        &mut grads.final_norm.scale,
        &mut grads.final_norm.offset,
    );

    for (layer, (lp, lg)) in trace
        .layers
        .iter()
        .zip(params.layers.iter().zip(grads.layers.iter_mut()))
        .rev()
        .map(|(t, pg)| (t, pg))
    {
        // FFN sublayer.
        let mut df = dx.clone();
        if let Some(mask) = &layer.ffn_drop {
            apply_mask(&mut df, mask);
        }
        layer.ffn_act.transpose_matmul_into(&df, &mut lg.ffn.w2);
        df.col_sums_into(&mut lg.ffn.b2);
        let mut dact = df.matmul_transpose(&lp.ffn.w2);
        for (g, pre) in dact.data_mut().iter_mut().zip(layer.ffn_pre.data()) {
            *g = *g * gelu_grad(*pre);
        }
        layer.ln2.out.transpose_matmul_into(&dact, &mut lg.ffn.w1);
        dact.col_sums_into(&mut lg.ffn.b1);
        let dn2 = dact.matmul_transpose(&lp.ffn.w1);
        let dln2 = layer_norm_backward(
            &dn2,
            &layer.x_mid2,
            &layer.ln2,
            &lp.ln2,
            &mut lg.ln2.scale,
            &mut lg.ln2.offset,
        );
        let mut d_mid2 = dx;
        d_mid2.add_in_place(&dln2);

        // Cross-attention sublayer.
        let mut d_mid1 = match (&layer.cross, &lp.cross, &mut lg.cross) {
            (Some((lnc, cattn, drop)), Some(cp), Some(cg)) => {
                let mut dc = d_mid2.clone();
                if let Some(mask) = drop {
                    apply_mask(&mut dc, mask);
                }
                let cond = trace.cond.as_ref().expect("cross layer requires cond");
                let (dq_in, _dcond) = attention_backward(
                    &dc,
                    &lnc.out,
                    cond,
                    cattn,
                    &AttnWeights {
                        wq: &cp.wq,
                        bq: &cp.bq,
                        wk: &cp.wk,
                        bk: &cp.bk,
                        wv: &cp.wv,
                        bv: &cp.bv,
                        wo: &cp.wo,
                        bo: &cp.bo,
                    },
                    &mut AttnGrads {
                        wq: &mut cg.wq,
                        bq: &mut cg.bq,
                        wk: &mut cg.wk,
                        bk: &mut cg.bk,
                        wv: &mut cg.wv,
                        bv: &mut cg.bv,
                        wo: &mut cg.wo,
                        bo: &mut cg.bo,
                    },
                    cfg.n_heads,
                );
                let dlnc = layer_norm_backward(
                    &dq_in,
                    &layer.x_mid1,
                    lnc,
                    &cp.norm,
                    &mut cg.norm.scale,
                    &mut cg.norm.offset,
                );
                let mut d = d_mid2;
                d.add_in_place(&dlnc);
                d
            }
            _ => d_mid2,
        };

        // Self-attention sublayer.
        let mut da = d_mid1.clone();
        if let Some(mask) = &layer.attn_drop {
            apply_mask(&mut da, mask);
        }
        let (dq_in, dkv_in) = attention_backward(
            &da,
            &layer.ln1.out,
            &layer.ln1.out,
            &layer.attn,
            &AttnWeights {
                wq: &lp.attn.wq,
                bq: &lp.attn.bq,
                wk: &lp.attn.wk,
                bk: &lp.attn.bk,
                wv: &lp.attn.wv,
                bv: &lp.attn.bv,
                wo: &lp.attn.wo,
                bo: &lp.attn.bo,
            },
            &mut AttnGrads {
                wq: &mut lg.attn.wq,
                bq: &mut lg.attn.bq,
                wk: &mut lg.attn.wk,
                bk: &mut lg.attn.bk,
                wv: &mut lg.attn.wv,
                bv: &mut lg.attn.bv,
                wo: &mut lg.attn.wo,
                bo: &mut lg.attn.bo,
            },
            cfg.n_heads,
        );
        let mut dn1 = dq_in;
        dn1.add_in_place(&dkv_in);
        let dln1 = layer_norm_backward(
            &dn1,
            &layer.x_in,
            &layer.ln1,
            &lp.ln1,
            &mut lg.ln1.scale,
            &mut lg.ln1.offset,
        );
        d_mid1.add_in_place(&dln1);
        dx = d_mid1;
    }

    for (i, &tok) in trace.token_idx.iter().enumerate() {
        let d_row = dx.row(i);
        for (g, d) in grads.token_emb.row_mut(tok).iter_mut().zip(d_row) {
            *g = *g + *d;
        }
        for (g, d) in grads.pos_emb.row_mut(i).iter_mut().zip(d_row) {
            *g = *g + *d;
        }
    }
}

fn validate_batch<F: Scalar>(
    params: &McmParams<F>,
    batch: &[BatchItem<'_>],
) -> Result<usize, McmError> {
    if batch.is_empty() {
        return Err(McmError::EmptyTargets);
    }
    let mut total = 0usize;
    for item in batch {
        if item.targets.is_empty() {
            return Err(McmError::EmptyTargets);
        }
        for (pos, _) in item.targets {
            if *pos >= item.seq.len() {
                return Err(McmError::ShapeMismatch(format!(
                    "target position {pos} outside sequence of length {}",
                    item.seq.len()
                )));
            }
        }
        check_condition(params, item.cond)?;
        total += item.targets.len();
    }
    Ok(total)
}

/// Mean cross-entropy over all masked positions in the batch, plus
/// gradients for every parameter tensor. `dropout_seed` enables seeded
/// dropout when the config's rate is positive.
pub fn loss_and_grads<F: Scalar>(
    params: &McmParams<F>,
    batch: &[BatchItem<'_>],
    dropout_seed: Option<u64>,
) -> Result<(F, McmParams<F>), McmError> {
    let total_targets = validate_batch(params, batch)?;
    let mut grads = McmParams::zeros(&params.config);
    let inv_total = F::from_f64(1.0 / total_targets as f64);
    let mut loss = F::zero();

    for (item_idx, item) in batch.iter().enumerate() {
        let mut rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(mix_seed(s, item_idx as u64)));
        let trace = forward_trace(params, item.seq, item.cond, rng.as_mut())?;

        let mut dlogits = Mat::zeros(trace.logits.rows(), trace.logits.cols());
        for (pos, code) in item.targets {
            let mut probs = trace.logits.row(*pos).to_vec();
            softmax_in_place(&mut probs);
            let target = usize::from(code.value());
            loss = loss - probs[target].max(F::from_f64(1e-300)).ln() * inv_total;
            let d_row = dlogits.row_mut(*pos);
            for (d, p) in d_row.iter_mut().zip(&probs) {
                *d = *d + *p * inv_total;
            }
            d_row[target] = d_row[target] - inv_total;
        }
        backward(params, &trace, &dlogits, &mut grads);
    }
    Ok((loss, grads))
}

/// Mean cross-entropy of the batch without computing gradients.
pub fn batch_loss<F: Scalar>(
    params: &McmParams<F>,
    batch: &[BatchItem<'_>],
    dropout_seed: Option<u64>,
) -> Result<F, McmError> {
    let total_targets = validate_batch(params, batch)?;
    let inv_total = F::from_f64(1.0 / total_targets as f64);
    let mut loss = F::zero();
    for (item_idx, item) in batch.iter().enumerate() {
        let mut rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(mix_seed(s, item_idx as u64)));
        let trace = forward_trace(params, item.seq, item.cond, rng.as_mut())?;
        for (pos, code) in item.targets {
            let mut probs = trace.logits.row(*pos).to_vec();
            softmax_in_place(&mut probs);
            loss = loss - probs[usize::from(code.value())].max(F::from_f64(1e-300)).ln() * inv_total;
        }
    }
    Ok(loss)
}

/// Replaces `n_mask` color positions (never framing or PAD tokens) with
/// `[MASK]`, chosen uniformly without replacement under `seed`. Targets
/// come back in ascending position order.
pub fn apply_masking(
    seq: &TokenSequence,
    n_mask: usize,
    seed: u64,
) -> Result<(TokenSequence, Vec<(usize, ColorCode)>), McmError> {
    let mut positions = seq.color_positions();
    if n_mask > positions.len() {
        return Err(McmError::TooManyMasks {
            asked: n_mask,
            available: positions.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher-Yates: the first n_mask entries form the sample.
    for i in 0..n_mask {
        let j = rng.gen_range(i..positions.len());
        positions.swap(i, j);
    }
    let mut picked: Vec<usize> = positions[..n_mask].to_vec();
    picked.sort_unstable();

    let mut tokens = seq.tokens().to_vec();
    let mut targets = Vec::with_capacity(n_mask);
    for pos in picked {
        let Token::Color(code) = tokens[pos] else {
            unreachable!("color_positions returned a non-color position");
        };
        targets.push((pos, code));
        tokens[pos] = Token::Mask;
    }
    Ok((TokenSequence::from_tokens(tokens), targets))
}

/// Argmax color codes at every `[MASK]` position, ascending.
pub(crate) fn predict_mask_codes<F: Scalar>(
    params: &McmParams<F>,
    seq: &TokenSequence,
    cond: Option<&ConditionEmbedding>,
) -> Result<Vec<(usize, ColorCode)>, McmError> {
    let logits = forward(params, seq, cond)?;
    let mut out = Vec::new();
    for (pos, token) in seq.tokens().iter().enumerate() {
        if token.index() != MASK_INDEX {
            continue;
        }
        let row = logits.row(pos);
        let mut best = 0usize;
        let mut best_v = row[0];
        for (i, v) in row.iter().enumerate().take(usize::from(COLOR_CODES)).skip(1) {
            if *v > best_v {
                best_v = *v;
                best = i;
            }
        }
        out.push((pos, ColorCode::new(best as u16).expect("argmax within code range")));
    }
    Ok(out)
}

/// Fills masked palette slots (`None`) with predicted bin centers; present
/// colors pass through unchanged.
pub fn predict_masked<F: Scalar>(
    params: &McmParams<F>,
    slots: &[Option<LabColor>],
    cond: Option<&ConditionEmbedding>,
    strategy: PredictStrategy,
) -> Result<Palette, McmError> {
    let PredictStrategy::Greedy = strategy;
    if slots.is_empty() || slots.len() > crate::color::MAX_PALETTE_LEN {
        return Err(McmError::Color(crate::color::ColorError::PaletteLength(
            slots.len(),
        )));
    }
    if slots.len() + 2 > params.config.seq_len {
        return Err(McmError::Color(crate::color::ColorError::SequenceTooShort {
            colors: slots.len(),
            got: params.config.seq_len,
        }));
    }
    if slots.iter().all(|s| s.is_some()) {
        return Err(McmError::NoMaskedSlots);
    }

    let mut tokens = Vec::with_capacity(params.config.seq_len);
    tokens.push(Token::PStart);
    for slot in slots {
        tokens.push(match slot {
            Some(c) => Token::Color(quantize(*c)),
            None => Token::Mask,
        });
    }
    tokens.push(Token::PEnd);
    tokens.resize(params.config.seq_len, Token::Pad);
    let seq = TokenSequence::from_tokens(tokens);

    let predicted = predict_mask_codes(params, &seq, cond)?;
    let mut filled = predicted.into_iter();
    let colors: Vec<LabColor> = slots
        .iter()
        .map(|slot| match slot {
            Some(c) => *c,
            None => {
                let (_, code) = filled.next().expect("one prediction per masked slot");
                dequantize(code)
            }
        })
        .collect();
    Ok(Palette::new(colors)?)
}

/// The palette embedding: the final-layer hidden state at the `[PSTART]`
/// position, after the final norm.
pub fn embed_palette<F: Scalar>(
    params: &McmParams<F>,
    palette: &Palette,
    cond: Option<&ConditionEmbedding>,
) -> Result<Vec<F>, McmError> {
    let seq = crate::color::tokenize_palette(palette, params.config.seq_len)?;
    let trace = forward_trace(params, &seq, cond, None)?;
    Ok(trace.final_ln.out.row(0).to_vec())
}
