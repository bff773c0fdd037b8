//! K-means palette extraction from images, in CIELAB space.
//!
//! Extraction is deterministic: k-means++ initialization and Lloyd
//! iterations are driven entirely by the caller's seed, and centroids are
//! ordered by descending cluster population with a fixed tie-break.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::color::{srgb_to_lab, LabColor, Palette, SrgbColor};

/// Pixel budget for palette extraction; larger images are strided down.
pub const SUBSAMPLE_CAP: usize = 65_536;

const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("failed to read image: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to decode image: {0}")]
    Decode(String),
    #[error("k-means needs at least {k} points, got {points}")]
    TooFewPoints { points: usize, k: usize },
    #[error("invalid k: {0} (expected 1 to 8)")]
    InvalidK(usize),
    #[error("max_iter must be at least 1")]
    InvalidMaxIter,
}

/// A row-major 8-bit sRGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<SrgbColor>,
}

impl ImageBuffer {
    /// Builds a buffer; `pixels` must hold exactly `width * height` entries.
    pub fn new(width: u32, height: u32, pixels: Vec<SrgbColor>) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be positive");
        assert_eq!(
            pixels.len(),
            width as usize * height as usize,
            "pixel count must match dimensions"
        );
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[SrgbColor] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> SrgbColor {
        self.pixels[y as usize * self.width as usize + x as usize]
    }
}

/// Decodes a PNG or JPEG into an 8-bit sRGB buffer, compositing any alpha
/// over white.
pub fn load_image(path: &Path) -> Result<ImageBuffer, ExtractError> {
    let bytes = std::fs::read(path)?;
    let decoded =
        image::load_from_memory(&bytes).map_err(|e| ExtractError::Decode(e.to_string()))?;
    let rgba = decoded.to_rgba8();
    let (width, height) = rgba.dimensions();
    let pixels = rgba
        .pixels()
        .map(|p| {
            let [r, g, b, a] = p.0;
            let alpha = f64::from(a) / 255.0;
            let over_white = |c: u8| (f64::from(c) * alpha + 255.0 * (1.0 - alpha)).round() as u8;
            SrgbColor::new(over_white(r), over_white(g), over_white(b))
        })
        .collect();
    Ok(ImageBuffer::new(width, height, pixels))
}

/// Replaces each pixel by its BT.601 luma on all three channels.
pub fn to_grayscale(img: &ImageBuffer) -> ImageBuffer {
    let pixels = img
        .pixels
        .iter()
        .map(|p| {
            let y = (0.299 * f64::from(p.r) + 0.587 * f64::from(p.g) + 0.114 * f64::from(p.b))
                .round() as u8;
            SrgbColor::new(y, y, y)
        })
        .collect();
    ImageBuffer::new(img.width, img.height, pixels)
}

/// Result of a k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub centroids: Vec<LabColor>,
    /// Per-point cluster index, in input order.
    pub assignments: Vec<usize>,
    /// Sum of squared CIELAB distances to assigned centroids.
    pub objective: f64,
    /// Lloyd iterations performed.
    pub iterations: usize,
    /// Objective after each Lloyd iteration (index 0 is the post-init value).
    pub objective_history: Vec<f64>,
}

/// k-means++ initial centroids, fully determined by `seed` and point order.
pub fn kmeans_pp_init(
    points: &[LabColor],
    k: usize,
    seed: u64,
) -> Result<Vec<LabColor>, ExtractError> {
    if k == 0 {
        return Err(ExtractError::InvalidK(k));
    }
    if points.len() < k {
        return Err(ExtractError::TooFewPoints {
            points: points.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.gen_range(0..points.len())];
    let mut dist_sq: Vec<f64> = points
        .iter()
        .map(|p| p.distance_sq(&points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist_sq.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, d) in dist_sq.iter().enumerate() {
                if r < *d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            // Every point coincides with a chosen centroid; take the lowest
            // index not yet used.
            (0..points.len()).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (d, p) in dist_sq.iter_mut().zip(points) {
            *d = d.min(p.distance_sq(&points[next]));
        }
    }
    Ok(chosen.into_iter().map(|i| points[i]).collect())
}

/// Lloyd iterations from explicit initial centroids. Stops when assignments
/// are stable or after `max_iter` iterations; empty clusters are re-seeded
/// to the point farthest from its current centroid.
pub fn lloyd_from(
    points: &[LabColor],
    init: &[LabColor],
    max_iter: usize,
) -> Result<KmeansResult, ExtractError> {
    if max_iter == 0 {
        return Err(ExtractError::InvalidMaxIter);
    }
    let k = init.len();
    if k == 0 {
        return Err(ExtractError::InvalidK(0));
    }
    if points.len() < k {
        return Err(ExtractError::TooFewPoints {
            points: points.len(),
            k,
        });
    }

    let nearest = |centroids: &[LabColor], p: &LabColor| -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = p.distance_sq(c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    };
    let objective_of = |centroids: &[LabColor], assignments: &[usize]| -> f64 {
        points
            .iter()
            .zip(assignments)
            .map(|(p, &j)| p.distance_sq(&centroids[j]))
            .sum()
    };

    let mut centroids = init.to_vec();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
    let mut history = vec![objective_of(&centroids, &assignments)];
    let mut iterations = 0;

    for _ in 0..max_iter {
        // Update step: per-cluster componentwise means.
        let mut sums = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); k];
        for (p, &j) in points.iter().zip(&assignments) {
            let s = &mut sums[j];
            s.0 += p.l();
            s.1 += p.a();
            s.2 += p.b();
            s.3 += 1;
        }
        let mut empty = Vec::new();
        for (j, s) in sums.iter().enumerate() {
            if s.3 > 0 {
                let n = s.3 as f64;
                centroids[j] = LabColor::clamped(s.0 / n, s.1 / n, s.2 / n);
            } else {
                empty.push(j);
            }
        }
        // Re-seed each empty cluster to the point farthest from its current
        // centroid (ties and repeats resolved by lowest point index).
        let mut taken = Vec::new();
        for j in empty {
            let mut far = 0;
            let mut far_d = -1.0;
            for (i, p) in points.iter().enumerate() {
                if taken.contains(&i) {
                    continue;
                }
                let d = p.distance_sq(&centroids[assignments[i]]);
                if d > far_d {
                    far_d = d;
                    far = i;
                }
            }
            centroids[j] = points[far];
            taken.push(far);
        }

        let new_assignments: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
        iterations += 1;
        history.push(objective_of(&centroids, &new_assignments));
        let stable = new_assignments == assignments;
        assignments = new_assignments;
        if stable {
            break;
        }
    }

    let objective = *history.last().unwrap();
    debug_assert!(history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    Ok(KmeansResult {
        centroids,
        assignments,
        objective,
        iterations,
        objective_history: history,
    })
}

/// K-means clustering in CIELAB: k-means++ initialization then Lloyd
/// iterations, deterministic given `(points order, k, seed)`.
pub fn kmeans_lab(
    points: &[LabColor],
    k: usize,
    max_iter: usize,
    seed: u64,
) -> Result<KmeansResult, ExtractError> {
    let init = kmeans_pp_init(points, k, seed)?;
    lloyd_from(points, &init, max_iter)
}

/// Extracts a `k`-color palette from an image.
///
/// Pixels are strided down to at most [`SUBSAMPLE_CAP`] samples, converted
/// to CIELAB, and clustered; centroids come back ordered by descending
/// cluster population (ties by ascending L, then a, then b). Coincident
/// centroids are merged, so the palette can be shorter than `k` on images
/// with few distinct colors.
pub fn extract_palette(img: &ImageBuffer, k: usize, seed: u64) -> Result<Palette, ExtractError> {
    extract_palette_capped(img, k, seed, Some(SUBSAMPLE_CAP))
}

/// [`extract_palette`] with an explicit subsample cap; `None` clusters every
/// pixel.
pub fn extract_palette_capped(
    img: &ImageBuffer,
    k: usize,
    seed: u64,
    cap: Option<usize>,
) -> Result<Palette, ExtractError> {
    if k == 0 || k > crate::color::MAX_PALETTE_LEN {
        return Err(ExtractError::InvalidK(k));
    }
    let n = img.pixels.len();
    let stride = match cap {
        Some(cap) if cap > 0 && n > cap => n.div_ceil(cap),
        _ => 1,
    };
    let points: Vec<LabColor> = img
        .pixels
        .iter()
        .step_by(stride)
        .map(|p| srgb_to_lab(*p))
        .collect();
    let result = kmeans_lab(&points, k.min(points.len()), DEFAULT_MAX_ITER, seed)?;

    let mut population = vec![0usize; result.centroids.len()];
    for &j in &result.assignments {
        population[j] += 1;
    }
    // Merge coincident centroids, accumulating their populations.
    let mut merged: Vec<(LabColor, usize)> = Vec::new();
    for (c, pop) in result.centroids.iter().zip(&population) {
        match merged.iter_mut().find(|(m, _)| m.distance_sq(c) < 1e-18) {
            Some(slot) => slot.1 += pop,
            None => merged.push((*c, *pop)),
        }
    }
    merged.sort_by(|(ca, pa), (cb, pb)| {
        pb.cmp(pa).then_with(|| {
            (ca.l(), ca.a(), ca.b())
                .partial_cmp(&(cb.l(), cb.a(), cb.b()))
                .unwrap()
        })
    });
    let colors = merged.into_iter().map(|(c, _)| c).collect();
    Palette::new(colors).map_err(|_| ExtractError::InvalidK(k))
}
