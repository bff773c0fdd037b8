//! Quantitative measures for palettes and colorized images.
//!
//! Palette similarity is DCCW-style: both palettes are reordered along
//! their shortest path, then each color is compared against the polyline
//! through the other palette. Image measures are a Bhattacharyya distance
//! over 3D RGB histograms, PSNR, and Gaussian-window SSIM on luma.

use thiserror::Error;

use crate::color::{ColorCode, LabColor, Palette, MAX_PALETTE_LEN};
use crate::extract::ImageBuffer;

/// Histogram resolution used by the batch evaluator.
pub const DEFAULT_HIST_BINS: usize = 8;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("palette of {0} colors exceeds the {MAX_PALETTE_LEN}-color limit")]
    PaletteTooLarge(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image {width}x{height} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    ImageTooSmall { width: u32, height: u32 },
}

/// Scores for one generated/reference image pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub hist_bha: f64,
    pub dccw: f64,
    /// `f64::INFINITY` when the images are identical.
    pub psnr: f64,
    pub ssim: f64,
}

/// A normalized 3D color histogram over the RGB cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram3D {
    bins_per_axis: usize,
    counts: Vec<f64>,
    normalized: bool,
}

impl Histogram3D {
    /// Normalizes raw counts into a distribution. `counts` must hold
    /// `bins_per_axis^3` non-negative values with a positive sum.
    pub fn from_counts(bins_per_axis: usize, counts: Vec<f64>) -> Result<Self, MetricsError> {
        let expected = bins_per_axis * bins_per_axis * bins_per_axis;
        if counts.len() != expected {
            return Err(MetricsError::ShapeMismatch(format!(
                "expected {expected} bins, got {}",
                counts.len()
            )));
        }
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) || counts.iter().any(|c| *c < 0.0) {
            return Err(MetricsError::ShapeMismatch(
                "histogram counts must be non-negative with a positive sum".into(),
            ));
        }
        Ok(Self {
            bins_per_axis,
            counts: counts.iter().map(|c| c / total).collect(),
            normalized: true,
        })
    }

    pub fn bins_per_axis(&self) -> usize {
        self.bins_per_axis
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

fn key(c: &LabColor) -> (f64, f64, f64) {
    (c.l(), c.a(), c.b())
}

/// Reorders a palette along its shortest path: the permutation minimizing
/// total consecutive CIELAB distance, searched exhaustively. Among equal
/// paths the lexicographically smallest permutation wins, and the result is
/// oriented so the endpoint with smaller L (then a, b) comes first.
pub fn sort_palette_min_path(p: &Palette) -> Result<Palette, MetricsError> {
    let colors = p.colors();
    let n = colors.len();
    if n > MAX_PALETTE_LEN {
        return Err(MetricsError::PaletteTooLarge(n));
    }
    if n == 1 {
        return Ok(p.clone());
    }

    let path_length = |perm: &[usize]| -> f64 {
        perm.windows(2)
            .map(|w| colors[w[0]].distance(&colors[w[1]]))
            .sum()
    };

    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_len = path_length(&perm);
    while next_permutation(&mut perm) {
        let len = path_length(&perm);
        if len < best_len {
            best_len = len;
            best.copy_from_slice(&perm);
        }
    }

    let mut ordered: Vec<LabColor> = best.iter().map(|&i| colors[i]).collect();
    if key(ordered.last().unwrap()) < key(&ordered[0]) {
        ordered.reverse();
    }
    Ok(Palette::new(ordered).expect("sorted palette keeps its length"))
}

/// Advances `perm` to the next lexicographic permutation, returning false
/// once the sequence is exhausted.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

fn point_to_segment(p: &LabColor, a: &LabColor, b: &LabColor) -> f64 {
    let (abl, aba, abb) = (b.l() - a.l(), b.a() - a.a(), b.b() - a.b());
    let len_sq = abl * abl + aba * aba + abb * abb;
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let (apl, apa, apb) = (p.l() - a.l(), p.a() - a.a(), p.b() - a.b());
    let t = ((apl * abl + apa * aba + apb * abb) / len_sq).clamp(0.0, 1.0);
    let (dl, da, db) = (apl - t * abl, apa - t * aba, apb - t * abb);
    (dl * dl + da * da + db * db).sqrt()
}

/// Minimum Euclidean distance from `c` to the polyline through `poly`
/// (or to the single point when `poly` has one vertex).
pub fn closest_point_to_polyline(c: &LabColor, poly: &[LabColor]) -> f64 {
    assert!(!poly.is_empty(), "polyline must have at least one vertex");
    if poly.len() == 1 {
        return c.distance(&poly[0]);
    }
    poly.windows(2)
        .map(|w| point_to_segment(c, &w[0], &w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Palette distance: both palettes are min-path sorted, then every color of
/// each palette contributes its distance to the other palette's polyline.
/// Zero iff each palette lies on the other's polyline; symmetric; invariant
/// under permutation of either input.
pub fn dccw(pa: &Palette, pb: &Palette) -> Result<f64, MetricsError> {
    let sorted_a = sort_palette_min_path(pa)?;
    let sorted_b = sort_palette_min_path(pb)?;
    let forward: f64 = pa
        .colors()
        .iter()
        .map(|c| closest_point_to_polyline(c, sorted_b.colors()))
        .sum();
    let backward: f64 = pb
        .colors()
        .iter()
        .map(|c| closest_point_to_polyline(c, sorted_a.colors()))
        .sum();
    Ok(forward + backward)
}

/// Normalized 3D histogram of an image over a uniformly partitioned RGB
/// cube. `bins_per_axis` must be in `[2, 32]`.
pub fn color_histogram(img: &ImageBuffer, bins_per_axis: usize) -> Histogram3D {
    assert!(
        (2..=32).contains(&bins_per_axis),
        "bins_per_axis must be in [2, 32]"
    );
    let mut counts = vec![0.0f64; bins_per_axis * bins_per_axis * bins_per_axis];
    let bin = |c: u8| c as usize * bins_per_axis / 256;
    for p in img.pixels() {
        let idx = (bin(p.r) * bins_per_axis + bin(p.g)) * bins_per_axis + bin(p.b);
        counts[idx] += 1.0;
    }
    Histogram3D::from_counts(bins_per_axis, counts).expect("pixel counts are valid")
}

/// Bhattacharyya distance `sqrt(1 - sum_i sqrt(p_i q_i))`, in `[0, 1]`.
pub fn bhattacharyya_distance(p: &Histogram3D, q: &Histogram3D) -> Result<f64, MetricsError> {
    if p.bins_per_axis != q.bins_per_axis {
        return Err(MetricsError::ShapeMismatch(format!(
            "histogram bins differ: {} vs {}",
            p.bins_per_axis, q.bins_per_axis
        )));
    }
    if !p.normalized || !q.normalized {
        return Err(MetricsError::ShapeMismatch(
            "histograms must be normalized".into(),
        ));
    }
    let bc: f64 = p
        .counts
        .iter()
        .zip(&q.counts)
        .map(|(a, b)| (a * b).sqrt())
        .sum();
    Ok((1.0 - bc.min(1.0)).sqrt())
}

fn check_same_shape(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), MetricsError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricsError::ShapeMismatch(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all channels; `f64::INFINITY` for
/// identical images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricsError> {
    check_same_shape(a, b)?;
    let mut sum_sq = 0.0f64;
    for (pa, pb) in a.pixels().iter().zip(b.pixels()) {
        for (ca, cb) in [(pa.r, pb.r), (pa.g, pb.g), (pa.b, pb.b)] {
            let d = f64::from(ca) - f64::from(cb);
            sum_sq += d * d;
        }
    }
    let mse = sum_sq / (a.pixels().len() as f64 * 3.0);
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (255.0 * 255.0 / mse).log10())
    }
}

fn luma_plane(img: &ImageBuffer) -> Vec<f64> {
    img.pixels()
        .iter()
        .map(|p| 0.299 * f64::from(p.r) + 0.587 * f64::from(p.g) + 0.114 * f64::from(p.b))
        .collect()
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let radius = (SSIM_WINDOW / 2) as i64;
    let mut kernel = [0.0; SSIM_WINDOW];
    let mut total = 0.0;
    for (i, k) in kernel.iter_mut().enumerate() {
        let x = (i as i64 - radius) as f64;
        *k = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        total += *k;
    }
    for k in &mut kernel {
        *k /= total;
    }
    kernel
}

/// Separable valid-mode Gaussian filter; output is (w-10) x (h-10).
fn gaussian_valid(field: &[f64], w: usize, h: usize) -> Vec<f64> {
    let kernel = gaussian_kernel();
    let ow = w - (SSIM_WINDOW - 1);
    let mut rows = vec![0.0f64; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * field[y * w + x + i];
            }
            rows[y * ow + x] = acc;
        }
    }
    let oh = h - (SSIM_WINDOW - 1);
    let mut out = vec![0.0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean structural similarity on luma: 11x11 Gaussian window with sigma 1.5,
/// K1=0.01, K2=0.03, dynamic range 255, averaged over the region where the
/// full window fits.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricsError> {
    check_same_shape(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::ImageTooSmall {
            width: a.width(),
            height: a.height(),
        });
    }

    let x = luma_plane(a);
    let y = luma_plane(b);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();

    let mu_x = gaussian_valid(&x, w, h);
    let mu_y = gaussian_valid(&y, w, h);
    let e_xx = gaussian_valid(&xx, w, h);
    let e_yy = gaussian_valid(&yy, w, h);
    let e_xy = gaussian_valid(&xy, w, h);

    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);

    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = e_xx[i] - mx * mx;
        let var_y = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
    }
    Ok(total / mu_x.len() as f64)
}

/// Fraction of positions where `predicted` equals `target` exactly.
pub fn accuracy_at_1(predicted: &[ColorCode], target: &[ColorCode]) -> Result<f64, MetricsError> {
    if predicted.len() != target.len() || predicted.is_empty() {
        return Err(MetricsError::ShapeMismatch(format!(
            "code lists must be equal-length and non-empty: {} vs {}",
            predicted.len(),
            target.len()
        )));
    }
    let hits = predicted
        .iter()
        .zip(target)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / predicted.len() as f64)
}
