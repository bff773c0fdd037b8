//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Library-level criteria exercise `palkit` directly; pipeline criteria
//! drive the compiled `palkit` binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use palkit::color::{
    dequantize, lab_to_srgb, quantize, srgb_to_lab, ColorCode, LabColor, Palette, SrgbColor,
    Token, TokenSequence, COLOR_CODES, VOCAB_SIZE,
};
use palkit::extract::{kmeans_pp_init, lloyd_from, ImageBuffer};
use palkit::mcm::{
    apply_masking, batch_loss, evaluate_grid, forward, loss_and_grads, stub_condition_encoder,
    train, train_with_val_fn, BatchItem, ConditionEmbedding, Conditioning, McmConfig, McmParams,
    TrainConfig, TrainExample,
};
use palkit::metrics::{
    accuracy_at_1, bhattacharyya_distance, closest_point_to_polyline, color_histogram, dccw,
    psnr, ssim, Histogram3D,
};

fn lab(l: f64, a: f64, b: f64) -> LabColor {
    LabColor::new(l, a, b).unwrap()
}

// ---------------------------------------------------------------------
// Criterion 1: color round trips
// ---------------------------------------------------------------------

#[test]
fn criterion_01_color_round_trips() {
    // Stratified sample: 16 levels per channel = 4096 colors, plus the
    // channel extremes on random colors.
    let mut count = 0;
    for r in (0..256).step_by(17) {
        for g in (0..256).step_by(17) {
            for b in (0..256).step_by(17) {
                let c = SrgbColor::new(r as u8, g as u8, b as u8);
                let back = lab_to_srgb(srgb_to_lab(c));
                assert!(
                    back.r.abs_diff(c.r) <= 1 && back.g.abs_diff(c.g) <= 1 && back.b.abs_diff(c.b) <= 1,
                    "round trip moved {c:?} to {back:?}"
                );
                count += 1;
            }
        }
    }
    assert!(count >= 4096);

    for code in 0..COLOR_CODES {
        let code = ColorCode::new(code).unwrap();
        assert_eq!(quantize(dequantize(code)), code);
    }
    println!("ACCEPTANCE PASS: criterion 1 (color round trips, {count} colors + 4096 codes)");
}

// ---------------------------------------------------------------------
// Criterion 2: k-means against the brute-force partition oracle
// ---------------------------------------------------------------------

/// Independent straight-line Lloyd iteration (same empty-cluster policy,
/// coded separately from the library).
fn oracle_lloyd(points: &[(f64, f64, f64)], init: &[(f64, f64, f64)], max_iter: usize) -> f64 {
    let dist_sq = |a: (f64, f64, f64), b: (f64, f64, f64)| {
        (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2) + (a.2 - b.2).powi(2)
    };
    let nearest = |cs: &[(f64, f64, f64)], p: (f64, f64, f64)| {
        let mut best = 0;
        for j in 1..cs.len() {
            if dist_sq(cs[j], p) < dist_sq(cs[best], p) {
                best = j;
            }
        }
        best
    };
    let mut centroids = init.to_vec();
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(&centroids, *p)).collect();
    for _ in 0..max_iter {
        let mut sums = vec![(0.0, 0.0, 0.0, 0usize); centroids.len()];
        for (p, &j) in points.iter().zip(&assign) {
            sums[j].0 += p.0;
            sums[j].1 += p.1;
            sums[j].2 += p.2;
            sums[j].3 += 1;
        }
        let mut taken: Vec<usize> = Vec::new();
        for (j, s) in sums.iter().enumerate() {
            if s.3 > 0 {
                centroids[j] = (s.0 / s.3 as f64, s.1 / s.3 as f64, s.2 / s.3 as f64);
            } else {
                let mut far = 0;
                let mut far_d = -1.0;
                for (i, p) in points.iter().enumerate() {
                    if taken.contains(&i) {
                        continue;
                    }
                    let d = dist_sq(*p, centroids[assign[i]]);
                    if d > far_d {
                        far_d = d;
                        far = i;
                    }
                }
                centroids[j] = points[far];
                taken.push(far);
            }
        }
        let new_assign: Vec<usize> = points.iter().map(|p| nearest(&centroids, *p)).collect();
        let stable = new_assign == assign;
        assign = new_assign;
        if stable {
            break;
        }
    }
    points
        .iter()
        .zip(&assign)
        .map(|(p, &j)| dist_sq(*p, centroids[j]))
        .sum()
}

/// Exhaustive best-of-all-partitions objective (centroid = cluster mean).
fn oracle_global_optimum(points: &[(f64, f64, f64)], k: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut assign = vec![0usize; n];
    loop {
        let mut sums = vec![(0.0, 0.0, 0.0, 0usize); k];
        for (p, &j) in points.iter().zip(&assign) {
            sums[j].0 += p.0;
            sums[j].1 += p.1;
            sums[j].2 += p.2;
            sums[j].3 += 1;
        }
        let mut objective = 0.0;
        for (p, &j) in points.iter().zip(&assign) {
            let s = &sums[j];
            let m = (s.0 / s.3 as f64, s.1 / s.3 as f64, s.2 / s.3 as f64);
            objective += (p.0 - m.0).powi(2) + (p.1 - m.1).powi(2) + (p.2 - m.2).powi(2);
        }
        best = best.min(objective);

        // Next assignment in base-k counting order.
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            assign[pos] += 1;
            if assign[pos] < k {
                break;
            }
            assign[pos] = 0;
            pos += 1;
        }
    }
}

#[test]
fn criterion_02_kmeans_matches_partition_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for instance in 0..60u64 {
        let n = rng.gen_range(4..=12);
        let k = rng.gen_range(1..=3.min(n));
        let points: Vec<LabColor> = (0..n)
            .map(|_| {
                lab(
                    rng.gen_range(0.0..100.0),
                    rng.gen_range(-100.0..100.0),
                    rng.gen_range(-100.0..100.0),
                )
            })
            .collect();
        let raw: Vec<(f64, f64, f64)> = points.iter().map(|c| (c.l(), c.a(), c.b())).collect();

        let init = kmeans_pp_init(&points, k, instance).unwrap();
        let result = lloyd_from(&points, &init, 100).unwrap();

        for w in result.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "objective increased on instance {instance}");
        }

        let init_raw: Vec<(f64, f64, f64)> = init.iter().map(|c| (c.l(), c.a(), c.b())).collect();
        let oracle = oracle_lloyd(&raw, &init_raw, 100);
        assert!(
            (result.objective - oracle).abs() <= 1e-9,
            "instance {instance}: lloyd {} vs oracle {oracle}",
            result.objective
        );

        let global = oracle_global_optimum(&raw, k);
        assert!(
            result.objective >= global - 1e-9,
            "instance {instance}: objective {} below global optimum {global}",
            result.objective
        );
    }
    println!("ACCEPTANCE PASS: criterion 2 (k-means oracle equivalence, 60 instances)");
}

// ---------------------------------------------------------------------
// Criterion 3: DCCW axioms and the dense-sampling oracle
// ---------------------------------------------------------------------

#[test]
fn criterion_03_dccw_axioms() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut random_palette = |rng: &mut ChaCha8Rng, len: usize| {
        Palette::new(
            (0..len)
                .map(|_| {
                    lab(
                        rng.gen_range(0.0..100.0),
                        rng.gen_range(-120.0..120.0),
                        rng.gen_range(-120.0..120.0),
                    )
                })
                .collect(),
        )
        .unwrap()
    };

    for round in 0..1000 {
        let len_p = rng.gen_range(1..=8);
        let len_q = rng.gen_range(1..=8);
        let p = random_palette(&mut rng, len_p);
        let q = random_palette(&mut rng, len_q);

        assert!(dccw(&p, &p).unwrap() < 1e-12, "round {round}: self-distance");
        let pq = dccw(&p, &q).unwrap();
        assert!((pq - dccw(&q, &p).unwrap()).abs() < 1e-12, "round {round}: symmetry");

        let mut shuffled: Vec<LabColor> = p.colors().to_vec();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let p_perm = Palette::new(shuffled).unwrap();
        assert!(
            (dccw(&p_perm, &q).unwrap() - pq).abs() < 1e-9,
            "round {round}: permutation invariance"
        );

        let x = p.colors()[0];
        let y = q.colors()[0];
        let d = dccw(
            &Palette::new(vec![x]).unwrap(),
            &Palette::new(vec![y]).unwrap(),
        )
        .unwrap();
        assert!(
            (d - 2.0 * x.distance(&y)).abs() < 1e-12,
            "round {round}: singleton closed form"
        );
    }

    // Dense-sampling oracle for the closest-point primitive.
    for _ in 0..40 {
        let poly: Vec<LabColor> = (0..4)
            .map(|_| {
                lab(
                    rng.gen_range(0.0..100.0),
                    rng.gen_range(-100.0..100.0),
                    rng.gen_range(-100.0..100.0),
                )
            })
            .collect();
        let c = lab(
            rng.gen_range(0.0..100.0),
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
        );
        let got = closest_point_to_polyline(&c, &poly);
        let mut sampled = f64::INFINITY;
        for w in poly.windows(2) {
            for s in 0..=10_000 {
                let t = f64::from(s) / 10_000.0;
                let q = (
                    w[0].l() + t * (w[1].l() - w[0].l()),
                    w[0].a() + t * (w[1].a() - w[0].a()),
                    w[0].b() + t * (w[1].b() - w[0].b()),
                );
                let d = ((c.l() - q.0).powi(2) + (c.a() - q.1).powi(2) + (c.b() - q.2).powi(2))
                    .sqrt();
                sampled = sampled.min(d);
            }
        }
        assert!((got - sampled).abs() < 1e-3, "got {got}, sampled {sampled}");
    }
    println!("ACCEPTANCE PASS: criterion 3 (DCCW axioms, 1000 palettes + dense oracle)");
}

// ---------------------------------------------------------------------
// Criterion 4: metric closed forms
// ---------------------------------------------------------------------

#[test]
fn criterion_04_metric_closed_forms() {
    let mut counts_p = vec![0.0; 8];
    counts_p[0] = 1.0;
    let mut counts_q = vec![0.0; 8];
    counts_q[0] = 0.5;
    counts_q[1] = 0.5;
    let hp = Histogram3D::from_counts(2, counts_p).unwrap();
    let hq = Histogram3D::from_counts(2, counts_q).unwrap();
    let bha = bhattacharyya_distance(&hp, &hq).unwrap();
    assert!((bha - 0.5412).abs() <= 1e-4, "bhattacharyya toy = {bha}");

    let zeros = ImageBuffer::new(4, 4, vec![SrgbColor::new(0, 0, 0); 16]);
    let full = ImageBuffer::new(4, 4, vec![SrgbColor::new(255, 255, 255); 16]);
    assert_eq!(psnr(&zeros, &full).unwrap(), 0.0, "psnr all-0 vs all-255");

    let gradient = ImageBuffer::new(
        16,
        16,
        (0..256)
            .map(|i| {
                let v = (i * 97 % 251) as u8;
                SrgbColor::new(v, v.wrapping_add(31), v.wrapping_add(77))
            })
            .collect(),
    );
    let self_ssim = ssim(&gradient, &gradient).unwrap();
    assert!((self_ssim - 1.0).abs() <= 1e-9, "ssim(self) = {self_ssim}");

    // Uniform cross-entropy from all-zero parameters.
    let cfg = McmConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        seq_len: 5,
        ..McmConfig::default()
    };
    let params = McmParams::<f64>::zeros(&cfg);
    let palette = Palette::new(vec![
        lab(10.0, 0.0, 0.0),
        lab(50.0, 10.0, -10.0),
        lab(90.0, -10.0, 10.0),
    ])
    .unwrap();
    let seq = palkit::color::tokenize_palette(&palette, 5).unwrap();
    let (masked, targets) = apply_masking(&seq, 2, 0).unwrap();
    let loss: f64 = batch_loss(
        &params,
        &[BatchItem {
            seq: &masked,
            targets: &targets,
            cond: None,
        }],
        None,
    )
    .unwrap();
    assert!(
        (loss - (VOCAB_SIZE as f64).ln()).abs() <= 1e-6,
        "uniform CE = {loss}"
    );

    // Exact-equality sanity for accuracy@1.
    let codes: Vec<ColorCode> = (0..4).map(|v| ColorCode::new(v).unwrap()).collect();
    assert_eq!(accuracy_at_1(&codes, &codes).unwrap(), 1.0);

    println!("ACCEPTANCE PASS: criterion 4 (metric closed forms)");
}

// ---------------------------------------------------------------------
// Criteria 5 and 6 share the tiny configs
// ---------------------------------------------------------------------

fn tiny_config(conditioned: bool) -> McmConfig {
    McmConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        seq_len: 5,
        conditioning: if conditioned {
            Conditioning::Cross
        } else {
            Conditioning::None
        },
        cond_dim: if conditioned { 16 } else { 0 },
        ..McmConfig::default()
    }
}

fn tiny_batch_palettes() -> Vec<Palette> {
    vec![
        Palette::new(vec![
            lab(12.0, 24.0, -32.0),
            lab(55.0, -41.0, 13.0),
            lab(88.0, 7.0, 61.0),
        ])
        .unwrap(),
        Palette::new(vec![lab(33.0, 90.0, 14.0), lab(71.0, -22.0, -48.0)]).unwrap(),
    ]
}

#[test]
fn criterion_05_full_gradient_check() {
    for conditioned in [false, true] {
        let cfg = tiny_config(conditioned);
        let mut params = McmParams::<f64>::init(cfg, 17).unwrap();
        let cond = conditioned.then(|| stub_condition_encoder("gradient check", 4, 16));

        let palettes = tiny_batch_palettes();
        let masked: Vec<(TokenSequence, Vec<(usize, ColorCode)>)> = palettes
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let seq = palkit::color::tokenize_palette(p, 5).unwrap();
                apply_masking(&seq, 1 + i % 2, i as u64).unwrap()
            })
            .collect();
        let batch: Vec<BatchItem<'_>> = masked
            .iter()
            .map(|(seq, targets)| BatchItem {
                seq,
                targets,
                cond: cond.as_ref(),
            })
            .collect();

        let (_, grads) = loss_and_grads(&params, &batch, None).unwrap();
        let flat_grads: Vec<Vec<f64>> = grads.flat_tensors().iter().map(|t| t.to_vec()).collect();
        let names: Vec<String> = grads
            .named_tensors()
            .into_iter()
            .map(|(name, _, _)| name)
            .collect();

        let h = 1e-5;
        let mut checked = 0usize;
        for ti in 0..flat_grads.len() {
            for ei in 0..flat_grads[ti].len() {
                params.flat_tensors_mut()[ti][ei] += h;
                let lp: f64 = batch_loss(&params, &batch, None).unwrap();
                params.flat_tensors_mut()[ti][ei] -= 2.0 * h;
                let lm: f64 = batch_loss(&params, &batch, None).unwrap();
                params.flat_tensors_mut()[ti][ei] += h;
                let fd = (lp - lm) / (2.0 * h);
                let g = flat_grads[ti][ei];
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                assert!(
                    rel < 1e-4,
                    "{} [{ei}] (conditioned={conditioned}): grad {g}, fd {fd}, rel {rel}",
                    names[ti]
                );
                checked += 1;
            }
        }
        println!(
            "ACCEPTANCE PASS: criterion 5 (gradient check, conditioned={conditioned}, {checked} parameters)"
        );
    }
}

// ---------------------------------------------------------------------
// Criterion 6: independent straight-line forward oracle
// ---------------------------------------------------------------------

/// A from-scratch forward pass over nested `Vec<Vec<f64>>`, sharing no code
/// with the library implementation.
mod forward_oracle {
    use palkit::color::Token;
    use palkit::mcm::{ConditionEmbedding, McmParams};

    type M = Vec<Vec<f64>>;

    fn norm(x: &M, scale: &[f64], offset: &[f64]) -> M {
        let d = x[0].len();
        x.iter()
            .map(|row| {
                let mean: f64 = row.iter().sum::<f64>() / d as f64;
                let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let rstd = 1.0 / (var + 1e-5).sqrt();
                (0..d)
                    .map(|c| scale[c] * (row[c] - mean) * rstd + offset[c])
                    .collect()
            })
            .collect()
    }

    fn linear(x: &M, w: &palkit::mcm::Mat<f64>, b: &[f64]) -> M {
        x.iter()
            .map(|row| {
                (0..w.cols())
                    .map(|o| {
                        let mut acc = b[o];
                        for (i, v) in row.iter().enumerate() {
                            acc += v * w.at(i, o);
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    fn gelu(x: f64) -> f64 {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
    }

    #[allow(clippy::needless_range_loop)]
    fn attention(q: &M, k: &M, v: &M, n_heads: usize, masked_keys: &[bool]) -> M {
        let s = q.len();
        let sk = k.len();
        let d = q[0].len();
        let dh = d / n_heads;
        let mut out = vec![vec![0.0; d]; s];
        for h in 0..n_heads {
            for i in 0..s {
                let mut scores = vec![f64::NEG_INFINITY; sk];
                for j in 0..sk {
                    if masked_keys.get(j).copied().unwrap_or(false) {
                        continue;
                    }
                    let mut dot = 0.0;
                    for c in 0..dh {
                        dot += q[i][h * dh + c] * k[j][h * dh + c];
                    }
                    scores[j] = dot / (dh as f64).sqrt();
                }
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                let mut probs = vec![0.0; sk];
                for j in 0..sk {
                    probs[j] = (scores[j] - max).exp();
                    total += probs[j];
                }
                for j in 0..sk {
                    probs[j] /= total;
                }
                for c in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..sk {
                        acc += probs[j] * v[j][h * dh + c];
                    }
                    out[i][h * dh + c] = acc;
                }
            }
        }
        out
    }

    fn add(a: &M, b: &M) -> M {
        a.iter()
            .zip(b)
            .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
            .collect()
    }

    pub fn logits(
        params: &McmParams<f64>,
        tokens: &[Token],
        cond: Option<&ConditionEmbedding>,
    ) -> M {
        let cfg = &params.config;
        let d = cfg.d_model;
        let masked_keys: Vec<bool> = tokens.iter().map(|t| *t == Token::Pad).collect();

        let mut x: M = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                (0..d)
                    .map(|c| {
                        params.token_emb.at(usize::from(t.index()), c) + params.pos_emb.at(i, c)
                    })
                    .collect()
            })
            .collect();

        let cond_rows: Option<M> = cond.map(|c| {
            (0..c.rows())
                .map(|r| (0..c.cols()).map(|j| f64::from(c.at(r, j))).collect())
                .collect()
        });

        for layer in &params.layers {
            let n1 = norm(&x, &layer.ln1.scale, &layer.ln1.offset);
            let q = linear(&n1, &layer.attn.wq, &layer.attn.bq);
            let k = linear(&n1, &layer.attn.wk, &layer.attn.bk);
            let v = linear(&n1, &layer.attn.wv, &layer.attn.bv);
            let attn = attention(&q, &k, &v, cfg.n_heads, &masked_keys);
            let proj = linear(&attn, &layer.attn.wo, &layer.attn.bo);
            x = add(&x, &proj);

            if let (Some(cross), Some(cm)) = (&layer.cross, &cond_rows) {
                let nc = norm(&x, &cross.norm.scale, &cross.norm.offset);
                let q = linear(&nc, &cross.wq, &cross.bq);
                let k = linear(cm, &cross.wk, &cross.bk);
                let v = linear(cm, &cross.wv, &cross.bv);
                let attn = attention(&q, &k, &v, cfg.n_heads, &[]);
                let proj = linear(&attn, &cross.wo, &cross.bo);
                x = add(&x, &proj);
            }

            let n2 = norm(&x, &layer.ln2.scale, &layer.ln2.offset);
            let mut hidden = linear(&n2, &layer.ffn.w1, &layer.ffn.b1);
            for row in &mut hidden {
                for v in row.iter_mut() {
                    *v = gelu(*v);
                }
            }
            let ffn = linear(&hidden, &layer.ffn.w2, &layer.ffn.b2);
            x = add(&x, &ffn);
        }

        let nf = norm(&x, &params.final_norm.scale, &params.final_norm.offset);
        linear(&nf, &params.head_w, &params.head_b)
    }
}

#[test]
fn criterion_06_independent_forward_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..20 {
        let conditioned = case % 2 == 1;
        let cfg = tiny_config(conditioned);
        let params = McmParams::<f64>::init(cfg, 100 + case).unwrap();
        let cond = conditioned.then(|| stub_condition_encoder(&format!("case {case}"), 4, 16));

        // Random well-formed sequence with a masked slot or two.
        let n_colors = rng.gen_range(1..=3);
        let mut tokens = vec![Token::PStart];
        for _ in 0..n_colors {
            if rng.gen_bool(0.3) {
                tokens.push(Token::Mask);
            } else {
                tokens.push(Token::Color(
                    ColorCode::new(rng.gen_range(0..COLOR_CODES)).unwrap(),
                ));
            }
        }
        tokens.push(Token::PEnd);
        tokens.resize(5, Token::Pad);

        let seq = TokenSequence::from_tokens(tokens.clone());
        let got = forward(&params, &seq, cond.as_ref()).unwrap();
        let want = forward_oracle::logits(&params, &tokens, cond.as_ref());

        for r in 0..got.rows() {
            for c in 0..got.cols() {
                assert!(
                    (got.at(r, c) - want[r][c]).abs() < 1e-10,
                    "case {case}: logits diverge at ({r},{c}): {} vs {}",
                    got.at(r, c),
                    want[r][c]
                );
            }
        }
    }
    println!("ACCEPTANCE PASS: criterion 6 (independent forward oracle, 20 inputs)");
}

// ---------------------------------------------------------------------
// Criterion 7: the synthetic benchmark
// ---------------------------------------------------------------------

/// Per-position pools of three codes; templates index into them.
const POOLS: [[(u16, u16, u16); 3]; 5] = [
    [(2, 8, 8), (8, 12, 6), (13, 6, 10)],
    [(4, 10, 4), (10, 5, 12), (6, 7, 7)],
    [(12, 9, 9), (3, 6, 5), (9, 11, 11)],
    [(5, 4, 9), (11, 10, 7), (7, 8, 13)],
    [(14, 7, 8), (1, 9, 6), (8, 5, 5)],
];

/// Ten templates with engineered ambiguity: identification degrades as
/// more positions are masked, so accuracy declines with the mask count.
const TEMPLATES: [[usize; 5]; 10] = [
    [1, 2, 2, 0, 2],
    [2, 0, 2, 0, 0],
    [1, 2, 2, 2, 1],
    [2, 0, 0, 1, 1],
    [0, 1, 2, 0, 1],
    [0, 1, 1, 0, 2],
    [2, 0, 0, 2, 2],
    [1, 0, 1, 2, 0],
    [0, 1, 0, 1, 2],
    [1, 2, 1, 2, 1],
];

const BENCH_COND_SHAPE: (usize, usize) = (4, 16);

fn template_caption(template: usize) -> String {
    format!("template_{template:02}")
}

/// A color jittered uniformly inside the bin (with a safety margin), so
/// its quantized code always equals the template's code.
fn jittered_color(rng: &mut ChaCha8Rng, bins: (u16, u16, u16)) -> LabColor {
    let jitter = |rng: &mut ChaCha8Rng, lo: f64, width: f64| {
        lo + width * rng.gen_range(0.05..0.95)
    };
    let l = jitter(rng, f64::from(bins.0) * 6.25, 6.25);
    let a = jitter(rng, f64::from(bins.1) * 16.0 - 128.0, 16.0);
    let b = jitter(rng, f64::from(bins.2) * 16.0 - 128.0, 16.0);
    lab(l, a, b)
}

fn benchmark_split(count: usize, salt: u64, conditioned: bool) -> Vec<TrainExample> {
    (0..count)
        .map(|i| {
            let template = i % TEMPLATES.len();
            let mut rng = ChaCha8Rng::seed_from_u64(salt.wrapping_mul(0x9e37).wrapping_add(i as u64));
            let colors: Vec<LabColor> = (0..5)
                .map(|pos| {
                    let bins = POOLS[pos][TEMPLATES[template][pos]];
                    let color = jittered_color(&mut rng, bins);
                    debug_assert_eq!(
                        quantize(color),
                        ColorCode::from_bins(bins.0, bins.1, bins.2).unwrap()
                    );
                    color
                })
                .collect();
            TrainExample {
                palette: Palette::new(colors).unwrap(),
                cond: conditioned.then(|| {
                    stub_condition_encoder(
                        &template_caption(template),
                        BENCH_COND_SHAPE.0,
                        BENCH_COND_SHAPE.1,
                    )
                }),
            }
        })
        .collect()
}

fn benchmark_model_config(conditioned: bool) -> McmConfig {
    McmConfig {
        d_model: 64,
        n_layers: 4,
        n_heads: 8,
        d_ff: 256,
        seq_len: 8,
        conditioning: if conditioned {
            Conditioning::Cross
        } else {
            Conditioning::None
        },
        cond_dim: if conditioned { BENCH_COND_SHAPE.1 } else { 0 },
        ..McmConfig::default()
    }
}

fn benchmark_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 32,
        max_epochs: 200,
        patience: 30,
        mask_min: 1,
        mask_max: 5,
        seed: 11,
    }
}

#[test]
fn criterion_07_synthetic_benchmark() {
    let started = std::time::Instant::now();
    let mut grids = Vec::new();
    for conditioned in [false, true] {
        let train_set = benchmark_split(1000, 1, conditioned);
        let val_set = benchmark_split(200, 2, conditioned);
        let test_set = benchmark_split(200, 3, conditioned);

        let (params, history) = train::<f32>(
            benchmark_model_config(conditioned),
            benchmark_train_config(),
            &train_set,
            &val_set,
        )
        .unwrap();
        assert!(
            history.epochs() <= 200,
            "trained past the 200-epoch budget"
        );
        let grid = evaluate_grid(&params, &test_set, &[0, 1, 2]).unwrap();
        println!(
            "benchmark conditioned={conditioned}: {} epochs (best {}), grid acc {:?}",
            history.epochs(),
            history.best_epoch,
            grid.iter().map(|r| (r.accuracy * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
        grids.push(grid);
    }
    let (plain, cond) = (&grids[0], &grids[1]);

    // (a) palette-only accuracy at one masked color.
    assert!(
        plain[0].accuracy >= 0.90,
        "(a) palette-only accuracy@1 at n_mask=1 is {}",
        plain[0].accuracy
    );
    // (b) palette-only accuracy declines with the mask count.
    for w in plain.windows(2) {
        assert!(
            w[1].accuracy <= w[0].accuracy + 1e-9,
            "(b) accuracy increased from n_mask={} to {}: {} -> {}",
            w[0].n_mask,
            w[1].n_mask,
            w[0].accuracy,
            w[1].accuracy
        );
    }
    // (c) conditioning strictly helps for 1-3 masked colors.
    for i in 0..3 {
        assert!(
            cond[i].accuracy > plain[i].accuracy,
            "(c) conditioned {} <= palette-only {} at n_mask={}",
            cond[i].accuracy,
            plain[i].accuracy,
            i + 1
        );
    }
    // (d) conditioning lowers DCCW with everything masked.
    assert!(
        cond[4].mean_dccw < plain[4].mean_dccw,
        "(d) conditioned DCCW {} >= palette-only {} at n_mask=5",
        cond[4].mean_dccw,
        plain[4].mean_dccw
    );

    println!(
        "ACCEPTANCE PASS: criterion 7 (synthetic benchmark, {:.1}s)",
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------
// Criterion 8: early-stopping mechanics at the default patience
// ---------------------------------------------------------------------

#[test]
fn criterion_08_early_stopping_mechanics() {
    // Validation loss improves through epoch 5, then plateaus. With the
    // default patience of 30, training halts exactly at epoch 35 and
    // returns the epoch-5 parameters.
    let plateau_epoch = 5usize;
    let scripted = |epoch: usize| -> f64 {
        if epoch <= plateau_epoch {
            10.0 - epoch as f64
        } else {
            10.0 - plateau_epoch as f64
        }
    };

    let train_set = benchmark_split(8, 4, false);
    let cfg = McmConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        seq_len: 8,
        ..McmConfig::default()
    };
    let tcfg = TrainConfig {
        batch_size: 8,
        max_epochs: 100,
        ..TrainConfig::default()
    };
    assert_eq!(tcfg.patience, 30, "spec default patience");

    let mut snapshots: Vec<Vec<f32>> = Vec::new();
    let (best, history) = train_with_val_fn::<f32, _>(cfg, tcfg, &train_set, |params, epoch| {
        snapshots.push(params.flat_tensors().concat());
        (scripted(epoch), 0.0)
    })
    .unwrap();

    assert_eq!(
        history.epochs(),
        plateau_epoch + 30,
        "halt epoch: expected {}",
        plateau_epoch + 30
    );
    assert_eq!(history.best_epoch, plateau_epoch);
    assert_eq!(
        best.flat_tensors().concat(),
        snapshots[plateau_epoch - 1],
        "returned parameters are not the epoch-{plateau_epoch} snapshot"
    );
    println!("ACCEPTANCE PASS: criterion 8 (early stopping halts at plateau + patience)");
}

// ---------------------------------------------------------------------
// Criteria 9 and 10: the CLI pipeline
// ---------------------------------------------------------------------

fn palkit_bin() -> &'static str {
    env!("CARGO_BIN_EXE_palkit")
}

fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(palkit_bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "`palkit {}` failed with {:?}\nstderr: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Writes a 10-image toy corpus with at least five distinct colors per
/// image, plus its captions file.
fn write_toy_corpus(dir: &Path) -> PathBuf {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let mut captions = String::new();
    for i in 0..10u32 {
        let mut img = image::RgbImage::new(24, 24);
        for (x, y, p) in img.enumerate_pixels_mut() {
            let palette = [
                [210u8, 40, 40],
                [40, 200, 60],
                [50, 60, 220],
                [230, 220, 40],
                [150, 40, 190],
                [240, 140, 30],
            ];
            let c = palette[((x / 4 + y / 5) as usize + i as usize) % palette.len()];
            *p = image::Rgb([
                c[0].saturating_add((x % 3) as u8),
                c[1].saturating_add((y % 3) as u8),
                c[2],
            ]);
        }
        let name = format!("img{i:02}.png");
        img.save(images.join(&name)).unwrap();
        captions.push_str(&format!("{name}\ttoy scene number {i}\n"));
    }
    let captions_path = dir.join("captions.tsv");
    std::fs::write(&captions_path, captions).unwrap();
    images
}

fn small_train_config(dir: &Path, max_epochs: usize) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        format!(
            r#"{{"d_model": 32, "n_layers": 2, "n_heads": 4, "seq_len": 8,
                "learning_rate": 0.001, "batch_size": 4, "max_epochs": {max_epochs},
                "patience": 30}}"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn criterion_09_cli_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_toy_corpus(dir);
    run_ok(
        dir,
        &[
            "build-dataset",
            "--images",
            "images",
            "--captions",
            "captions.tsv",
            "--out",
            "manifest.jsonl",
            "--split",
            "0.8,0.1,0.1",
            "--seed",
            "7",
        ],
    );
    small_train_config(dir, 2);

    let train_args = [
        "train",
        "--manifest",
        "manifest.jsonl",
        "--variant",
        "palette-only",
        "--config",
        "config.json",
        "--out",
        "model.mcm",
        "--seed",
        "3",
    ];
    let eval_args = [
        "eval-model",
        "--ckpt",
        "model.mcm",
        "--manifest",
        "manifest.jsonl",
        "--split",
        "test",
        "--seeds",
        "0,1,2",
        "--out",
        "grid.csv",
    ];

    run_ok(dir, &train_args);
    run_ok(dir, &eval_args);
    let first = (
        std::fs::read(dir.join("model.mcm")).unwrap(),
        std::fs::read(dir.join("model.mcm.history.csv")).unwrap(),
        std::fs::read(dir.join("grid.csv")).unwrap(),
    );

    run_ok(dir, &train_args);
    run_ok(dir, &eval_args);
    assert_eq!(first.0, std::fs::read(dir.join("model.mcm")).unwrap());
    assert_eq!(
        first.1,
        std::fs::read(dir.join("model.mcm.history.csv")).unwrap()
    );
    assert_eq!(first.2, std::fs::read(dir.join("grid.csv")).unwrap());

    // Checkpoint round trip is bit-exact.
    let params = palkit::mcm::load_checkpoint(&dir.join("model.mcm")).unwrap();
    let copy = dir.join("copy.mcm");
    palkit::mcm::save_checkpoint(&params, &copy).unwrap();
    let reloaded = palkit::mcm::load_checkpoint(&copy).unwrap();
    assert_eq!(params, reloaded);

    println!("ACCEPTANCE PASS: criterion 9 (CLI determinism and bit-exact checkpoints)");
}

#[test]
fn criterion_10_end_to_end_pipeline() {
    let started = std::time::Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let images = write_toy_corpus(dir);

    run_ok(
        dir,
        &[
            "build-dataset",
            "--images",
            "images",
            "--captions",
            "captions.tsv",
            "--out",
            "manifest.jsonl",
            "--split",
            "0.8,0.1,0.1",
            "--seed",
            "0",
            "--stub-cond",
            "4x16",
        ],
    );
    let manifest = std::fs::read_to_string(dir.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 10);
    let count = |split: &str| {
        manifest
            .lines()
            .filter(|l| l.contains(&format!("\"split\":\"{split}\"")))
            .count()
    };
    assert_eq!((count("train"), count("val"), count("test")), (8, 1, 1));
    assert!(manifest.lines().all(|l| l.contains("conds/")));

    small_train_config(dir, 3);
    run_ok(
        dir,
        &[
            "train",
            "--manifest",
            "manifest.jsonl",
            "--variant",
            "cond",
            "--config",
            "config.json",
            "--out",
            "model.mcm",
            "--seed",
            "1",
        ],
    );
    let history = std::fs::read_to_string(dir.join("model.mcm.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4, "header + 3 epochs");

    // Predict with one masked slot, conditioned on a stub embedding.
    std::fs::write(
        dir.join("masked.json"),
        r##"["#D02828", null, "#3038DC", "#E6DC28", "#9628BE"]"##,
    )
    .unwrap();
    let cond_file = std::fs::read_dir(dir.join("conds")).unwrap().next().unwrap().unwrap();
    run_ok(
        dir,
        &[
            "predict",
            "--ckpt",
            "model.mcm",
            "--palette",
            "masked.json",
            "--cond",
            cond_file.path().to_str().unwrap(),
            "--out",
            "completed.json",
        ],
    );
    let completed = std::fs::read_to_string(dir.join("completed.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&completed).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 5);

    run_ok(
        dir,
        &[
            "eval-model",
            "--ckpt",
            "model.mcm",
            "--manifest",
            "manifest.jsonl",
            "--split",
            "test",
            "--seeds",
            "0,1,2",
            "--out",
            "grid.csv",
        ],
    );
    let grid = std::fs::read_to_string(dir.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 6, "header + 5 mask counts");

    // Image-pair metrics: an identical pair and a cross pair.
    std::fs::write(
        dir.join("pairs.csv"),
        format!(
            "{0}/img00.png,{0}/img00.png\n{0}/img01.png,{0}/img02.png\n",
            images.display()
        ),
    )
    .unwrap();
    run_ok(
        dir,
        &["eval-images", "--pairs", "pairs.csv", "--out", "metrics.csv"],
    );
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4, "header + 2 pairs + mean");
    let identical_row = metrics.lines().nth(1).unwrap();
    assert!(identical_row.contains(",inf,"), "identical pair PSNR is inf");

    // Embedding export and the color plot round out the pipeline.
    run_ok(
        dir,
        &[
            "embed",
            "--ckpt",
            "model.mcm",
            "--palette",
            "completed.json",
            "--cond",
            cond_file.path().to_str().unwrap(),
            "--out",
            "palette.pteb",
        ],
    );
    let emb = palkit::mcm::read_pteb(&dir.join("palette.pteb")).unwrap();
    assert_eq!((emb.rows(), emb.cols()), (1, 32));

    run_ok(
        dir,
        &[
            "plot-colors",
            "--manifest",
            "manifest.jsonl",
            "--method",
            "pca",
            "--seed",
            "0",
            "--out",
            "colors",
        ],
    );
    assert!(dir.join("colors.csv").is_file() && dir.join("colors.svg").is_file());

    println!(
        "ACCEPTANCE PASS: criterion 10 (end-to-end pipeline, {:.1}s)",
        started.elapsed().as_secs_f64()
    );
}
