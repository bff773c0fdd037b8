//! Palette-text-image manifests: build, serialize, and attach conditions.
//!
//! A manifest is JSONL, one record per line, with fields
//! `id, image_path, caption, palette, split, cond_path`. Records are
//! written in id order and palettes are stored as `[[L,a,b]; 5]`.

mod project;

pub use project::{
    project_colors_2d, write_projection_csv, write_projection_svg, ProjectedColor,
    ProjectionMethod, TSNE_POINT_CAP,
};

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{extract_palette, load_image, ExtractError};
use crate::mcm::{read_pteb, stub_condition_encoder, write_pteb, McmError};
use crate::color::Palette;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("no usable images in corpus")]
    EmptyCorpus,
    #[error("missing condition embeddings for: {}", .0.join(", "))]
    MissingEmbedding(Vec<String>),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{count} palette colors exceed the exact t-SNE cap of {cap}")]
    TooManyPoints { count: usize, cap: usize },
    #[error("invalid split spec: {0}")]
    InvalidSplit(String),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Mcm(#[from] McmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One manifest line. Palettes always hold exactly five colors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: String,
    pub caption: String,
    pub palette: Palette,
    pub split: Split,
    pub cond_path: Option<String>,
}

/// Train/val/test fractions; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    train: f64,
    val: f64,
    test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, DatasetError> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(in_unit(train) && in_unit(val) && in_unit(test)) {
            return Err(DatasetError::InvalidSplit(format!(
                "fractions must be in [0, 1]: {train}, {val}, {test}"
            )));
        }
        if ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidSplit(format!(
                "fractions must sum to 1, got {}",
                train + val + test
            )));
        }
        Ok(Self { train, val, test })
    }

    /// Split assignment for `n` records by cumulative rounding, keeping
    /// every split within one record of its exact fraction.
    fn boundaries(&self, n: usize) -> (usize, usize) {
        let b1 = (n as f64 * self.train).round() as usize;
        let b2 = (n as f64 * (self.train + self.val)).round() as usize;
        (b1.min(n), b2.min(n))
    }
}

/// Output of [`build_manifest`]: the records plus how many corpus images
/// were skipped (undecodable, missing caption, or too few distinct colors).
#[derive(Debug)]
pub struct BuildReport {
    pub records: Vec<ManifestRecord>,
    pub skipped: usize,
}

fn read_captions(path: &Path) -> Result<BTreeMap<String, String>, DatasetError> {
    let file = std::fs::File::open(path)?;
    let mut captions = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (filename, caption) = line.split_once('\t').ok_or(DatasetError::Parse {
            line: idx + 1,
            message: "expected `filename<TAB>caption`".into(),
        })?;
        captions.insert(filename.to_string(), caption.to_string());
    }
    Ok(captions)
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Builds one record per usable image: a seeded k-color palette plus the
/// caption, with split assignment by seeded shuffle then contiguous
/// slicing. Unusable images are skipped with a logged warning.
pub fn build_manifest(
    image_dir: &Path,
    captions_file: &Path,
    k: usize,
    split: SplitSpec,
    seed: u64,
) -> Result<BuildReport, DatasetError> {
    let captions = read_captions(captions_file)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(image_dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();

    let mut records = Vec::new();
    let mut skipped = 0usize;
    for (idx, path) in files.iter().enumerate() {
        let filename = path
            .file_name()
            .expect("directory entries have names")
            .to_string_lossy()
            .to_string();
        let Some(caption) = captions.get(&filename) else {
            log::warn!("skipping {filename}: no caption");
            skipped += 1;
            continue;
        };
        let img = match load_image(path) {
            Ok(img) => img,
            Err(err) => {
                log::warn!("skipping {filename}: {err}");
                skipped += 1;
                continue;
            }
        };
        let palette = extract_palette(&img, k, crate::mcm::mix_seed(seed, idx as u64))?;
        if palette.len() != k {
            log::warn!(
                "skipping {filename}: only {} distinct colors, need {k}",
                palette.len()
            );
            skipped += 1;
            continue;
        }
        let id = path
            .file_stem()
            .expect("image files have stems")
            .to_string_lossy()
            .to_string();
        if records.iter().any(|r: &ManifestRecord| r.id == id) {
            return Err(DatasetError::DuplicateId(id));
        }
        records.push(ManifestRecord {
            id,
            image_path: filename,
            caption: caption.clone(),
            palette,
            split: Split::Train,
            cond_path: None,
        });
    }
    if records.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let (b1, b2) = split.boundaries(records.len());
    for (rank, &i) in order.iter().enumerate() {
        records[i].split = if rank < b1 {
            Split::Train
        } else if rank < b2 {
            Split::Val
        } else {
            Split::Test
        };
    }

    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(BuildReport { records, skipped })
}

/// Writes JSONL in id order.
pub fn save_manifest(records: &[ManifestRecord], path: &Path) -> Result<(), DatasetError> {
    let mut sorted: Vec<&ManifestRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = String::new();
    for record in sorted {
        out.push_str(&serde_json::to_string(record).expect("manifest records serialize"));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Loads and validates JSONL records: parse errors carry the line number,
/// ids must be unique, palettes must hold exactly five colors.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>, DatasetError> {
    let file = std::fs::File::open(path)?;
    let mut records: Vec<ManifestRecord> = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        if record.palette.len() != 5 {
            return Err(DatasetError::Parse {
                line: idx + 1,
                message: format!("palette has {} colors, expected 5", record.palette.len()),
            });
        }
        if records.iter().any(|r| r.id == record.id) {
            return Err(DatasetError::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

/// Where condition embeddings come from.
#[derive(Debug, Clone)]
pub enum CondSource {
    /// Deterministic stub embeddings generated from each record's caption.
    Stub,
    /// A directory of pre-computed `<id>.pteb` files.
    ExternalDir(PathBuf),
}

/// Points every record's `cond_path` at a valid PTEB file. Stub mode writes
/// `conds/<id>.pteb` next to the manifest (idempotently); external mode
/// validates presence and width of pre-computed files. Palettes and
/// captions are never touched.
pub fn attach_conditions(
    records: &mut [ManifestRecord],
    source: &CondSource,
    rows: usize,
    cols: usize,
    manifest_dir: &Path,
) -> Result<(), DatasetError> {
    match source {
        CondSource::Stub => {
            let cond_dir = manifest_dir.join("conds");
            std::fs::create_dir_all(&cond_dir)?;
            for record in records.iter_mut() {
                let emb = stub_condition_encoder(&record.caption, rows, cols);
                write_pteb(&cond_dir.join(format!("{}.pteb", record.id)), &emb)?;
                record.cond_path = Some(format!("conds/{}.pteb", record.id));
            }
        }
        CondSource::ExternalDir(dir) => {
            let missing: Vec<String> = records
                .iter()
                .filter(|r| !dir.join(format!("{}.pteb", r.id)).is_file())
                .map(|r| r.id.clone())
                .collect();
            if !missing.is_empty() {
                return Err(DatasetError::MissingEmbedding(missing));
            }
            for record in records.iter_mut() {
                let path = dir.join(format!("{}.pteb", record.id));
                let emb = read_pteb(&path)?;
                if emb.cols() != cols {
                    return Err(DatasetError::ShapeMismatch(format!(
                        "{}: embedding has {} columns, expected {cols}",
                        record.id,
                        emb.cols()
                    )));
                }
                record.cond_path = Some(path.to_string_lossy().to_string());
            }
        }
    }
    Ok(())
}
