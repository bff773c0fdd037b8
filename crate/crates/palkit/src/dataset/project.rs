//! 2D projection of a manifest's palette-color distribution.
//!
//! Colors are grouped by quantized code; each distinct code contributes one
//! point (the mean of its colors) weighted by its multiplicity. Points are
//! projected with PCA or exact t-SNE and can be written as CSV or as an
//! SVG scatter whose dot area tracks frequency.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, ManifestRecord};
use crate::color::{lab_to_srgb, quantize, LabColor};

/// Exact t-SNE is O(N^2); refuse manifests with more total palette colors
/// than this.
pub const TSNE_POINT_CAP: usize = 20_000;

const TSNE_ITERATIONS: usize = 1_000;
const TSNE_PERPLEXITY: f64 = 30.0;
const TSNE_LEARNING_RATE: f64 = 200.0;
const TSNE_EXAGGERATION: f64 = 12.0;
const TSNE_EXAGGERATION_ITERS: usize = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

/// One distinct quantized color placed in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedColor {
    pub x: f64,
    pub y: f64,
    pub color: LabColor,
    pub frequency: usize,
}

/// Projects the manifest's palette colors to 2D. PCA uses the top two
/// principal axes of the mean-centered points; t-SNE runs the exact
/// algorithm with perplexity 30 for 1,000 seeded iterations.
pub fn project_colors_2d(
    records: &[ManifestRecord],
    method: ProjectionMethod,
    seed: u64,
) -> Result<Vec<ProjectedColor>, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    let total: usize = records.iter().map(|r| r.palette.len()).sum();
    if method == ProjectionMethod::Tsne && total > TSNE_POINT_CAP {
        return Err(DatasetError::TooManyPoints {
            count: total,
            cap: TSNE_POINT_CAP,
        });
    }

    // Group by code: frequency plus the componentwise mean color.
    let mut groups: BTreeMap<u16, (f64, f64, f64, usize)> = BTreeMap::new();
    for record in records {
        for c in record.palette.colors() {
            let entry = groups.entry(quantize(*c).value()).or_insert((0.0, 0.0, 0.0, 0));
            entry.0 += c.l();
            entry.1 += c.a();
            entry.2 += c.b();
            entry.3 += 1;
        }
    }
    let colors: Vec<LabColor> = groups
        .values()
        .map(|(l, a, b, n)| {
            let n = *n as f64;
            LabColor::clamped(l / n, a / n, b / n)
        })
        .collect();
    let frequencies: Vec<usize> = groups.values().map(|g| g.3).collect();
    let points: Vec<[f64; 3]> = colors.iter().map(|c| [c.l(), c.a(), c.b()]).collect();

    let coords = match method {
        ProjectionMethod::Pca => pca_2d(&points),
        ProjectionMethod::Tsne => tsne_2d(&points, seed),
    };

    Ok(coords
        .into_iter()
        .zip(colors)
        .zip(frequencies)
        .map(|(((x, y), color), frequency)| ProjectedColor {
            x,
            y,
            color,
            frequency,
        })
        .collect())
}

fn mean_center(points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let n = points.len() as f64;
    let mut mean = [0.0f64; 3];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    points
        .iter()
        .map(|p| [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]])
        .collect()
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi
/// rotations; returns (eigenvalues, column eigenvectors).
fn jacobi_eigen_3x3(mut m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut v = [[0.0; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..64 {
        let mut off = 0.0;
        for p in 0..3 {
            for q in (p + 1)..3 {
                off += m[p][q] * m[p][q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..3 {
            for q in (p + 1)..3 {
                if m[p][q].abs() < 1e-30 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..3 {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..3 {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ([m[0][0], m[1][1], m[2][2]], v)
}

fn pca_2d(points: &[[f64; 3]]) -> Vec<(f64, f64)> {
    let centered = mean_center(points);
    let n = points.len() as f64;
    let mut cov = [[0.0f64; 3]; 3];
    for p in &centered {
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += p[i] * p[j] / n;
            }
        }
    }
    let (values, vectors) = jacobi_eigen_3x3(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| values[*b].partial_cmp(&values[*a]).unwrap());

    // Deterministic sign: the largest-magnitude component of each axis is
    // positive.
    let axis = |idx: usize| -> [f64; 3] {
        let mut a = [vectors[0][idx], vectors[1][idx], vectors[2][idx]];
        let lead = (0..3).max_by(|&i, &j| a[i].abs().partial_cmp(&a[j].abs()).unwrap()).unwrap();
        if a[lead] < 0.0 {
            for v in &mut a {
                *v = -*v;
            }
        }
        a
    };
    let e1 = axis(order[0]);
    let e2 = axis(order[1]);
    centered
        .iter()
        .map(|p| {
            (
                p[0] * e1[0] + p[1] * e1[1] + p[2] * e1[2],
                p[0] * e2[0] + p[1] * e2[1] + p[2] * e2[2],
            )
        })
        .collect()
}

/// Per-point conditional distributions whose entropy matches the target
/// perplexity, found by binary search over the Gaussian precision.
fn tsne_p_matrix(dist_sq: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target_entropy = perplexity.ln();
    let mut p = vec![0.0f64; n * n];
    for i in 0..n {
        let mut beta = 1.0f64;
        let (mut beta_min, mut beta_max) = (f64::NEG_INFINITY, f64::INFINITY);
        for _ in 0..50 {
            let mut sum = 0.0;
            let mut sum_weighted = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (-beta * dist_sq[i * n + j]).exp();
                sum += w;
                sum_weighted += w * dist_sq[i * n + j];
            }
            if sum <= 0.0 {
                break;
            }
            // Shannon entropy of the conditional distribution.
            let entropy = sum.ln() + beta * sum_weighted / sum;
            let diff = entropy - target_entropy;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_finite() {
                    (beta + beta_max) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_finite() {
                    (beta + beta_min) / 2.0
                } else {
                    beta / 2.0
                };
            }
        }
        let mut sum = 0.0;
        for j in 0..n {
            if i != j {
                p[i * n + j] = (-beta * dist_sq[i * n + j]).exp();
                sum += p[i * n + j];
            }
        }
        if sum > 0.0 {
            for j in 0..n {
                p[i * n + j] /= sum;
            }
        }
    }
    p
}

fn tsne_2d(points: &[[f64; 3]], seed: u64) -> Vec<(f64, f64)> {
    let n = points.len();
    if n == 1 {
        return vec![(0.0, 0.0)];
    }
    let mut dist_sq = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = (0..3).map(|k| (points[i][k] - points[j][k]).powi(2)).sum();
            dist_sq[i * n + j] = d;
            dist_sq[j * n + i] = d;
        }
    }

    let perplexity = TSNE_PERPLEXITY.min(((n - 1) as f64 / 3.0).max(1.0));
    let p_cond = tsne_p_matrix(&dist_sq, n, perplexity);
    let mut p = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((p_cond[i * n + j] + p_cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    // Gaussian init via Box-Muller, scaled small.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = || {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [gaussian() * 1e-4, gaussian() * 1e-4]).collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];

    let mut q_unnorm = vec![0.0f64; n * n];
    for iter in 0..TSNE_ITERATIONS {
        let exaggeration = if iter < TSNE_EXAGGERATION_ITERS {
            TSNE_EXAGGERATION
        } else {
            1.0
        };
        let momentum = if iter < TSNE_EXAGGERATION_ITERS { 0.5 } else { 0.8 };

        let mut q_sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let w = 1.0 / (1.0 + dx * dx + dy * dy);
                q_unnorm[i * n + j] = w;
                q_unnorm[j * n + i] = w;
                q_sum += 2.0 * w;
            }
        }

        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = q_unnorm[i * n + j];
                let q = (w / q_sum).max(1e-12);
                let coef = 4.0 * (exaggeration * p[i * n + j] - q) * w;
                grad[0] += coef * (y[i][0] - y[j][0]);
                grad[1] += coef * (y[i][1] - y[j][1]);
            }
            for d in 0..2 {
                // Adaptive per-coordinate gains, as in the reference
                // implementation; stabilizes the fixed learning rate.
                gains[i][d] = if grad[d].signum() != velocity[i][d].signum() {
                    (gains[i][d] + 0.2).min(1e3)
                } else {
                    (gains[i][d] * 0.8).max(0.01)
                };
                velocity[i][d] =
                    momentum * velocity[i][d] - TSNE_LEARNING_RATE * gains[i][d] * grad[d];
            }
        }
        let mut mean = [0.0f64; 2];
        for (yi, vi) in y.iter_mut().zip(&velocity) {
            yi[0] += vi[0];
            yi[1] += vi[1];
            mean[0] += yi[0];
            mean[1] += yi[1];
        }
        for yi in &mut y {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }
    }
    y.into_iter().map(|p| (p[0], p[1])).collect()
}

/// CSV with header `x,y,L,a,b,frequency`, one row per distinct code.
pub fn write_projection_csv(path: &Path, points: &[ProjectedColor]) -> Result<(), DatasetError> {
    let mut out = String::from("x,y,L,a,b,frequency\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.x,
            p.y,
            p.color.l(),
            p.color.a(),
            p.color.b(),
            p.frequency
        ));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// SVG scatter: one circle per distinct code, filled with its sRGB color,
/// radius proportional to the square root of its frequency.
pub fn write_projection_svg(path: &Path, points: &[ProjectedColor]) -> Result<(), DatasetError> {
    const SIZE: f64 = 800.0;
    const MARGIN: f64 = 40.0;
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let span_x = (max_x - min_x).max(1e-9);
    let span_y = (max_y - min_y).max(1e-9);
    let max_freq = points.iter().map(|p| p.frequency).max().unwrap_or(1) as f64;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n",
        SIZE
    ));
    svg.push_str(&format!(
        "  <rect width=\"{0}\" height=\"{0}\" fill=\"white\"/>\n",
        SIZE
    ));
    for p in points {
        let cx = MARGIN + (p.x - min_x) / span_x * (SIZE - 2.0 * MARGIN);
        let cy = MARGIN + (p.y - min_y) / span_y * (SIZE - 2.0 * MARGIN);
        let radius = 2.0 + 10.0 * (p.frequency as f64 / max_freq).sqrt();
        let fill = lab_to_srgb(p.color).to_hex();
        svg.push_str(&format!(
            "  <circle cx=\"{cx:.3}\" cy=\"{cy:.3}\" r=\"{radius:.3}\" fill=\"{fill}\" fill-opacity=\"0.9\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    let mut file = std::fs::File::create(path)?;
    file.write_all(svg.as_bytes())?;
    Ok(())
}
