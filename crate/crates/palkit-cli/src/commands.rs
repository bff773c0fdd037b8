use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use palkit::color::{parse_palette, parse_palette_slots, ColorError, Palette};
use palkit::dataset::{
    attach_conditions, build_manifest, load_manifest, project_colors_2d, save_manifest,
    write_projection_csv, write_projection_svg, CondSource, DatasetError, ManifestRecord,
    ProjectionMethod, Split, SplitSpec,
};
use palkit::extract::{extract_palette, load_image, ExtractError};
use palkit::mcm::{
    embed_palette, evaluate_grid, load_checkpoint, predict_masked, read_pteb, save_checkpoint,
    train as train_model, write_pteb, ConditionEmbedding, Conditioning, McmConfig, McmError,
    PredictStrategy, TrainConfig, TrainExample,
};
use palkit::metrics::{
    bhattacharyya_distance, color_histogram, dccw, psnr, ssim, MetricsError, DEFAULT_HIST_BINS,
};

use crate::{
    BuildDatasetArgs, EmbedArgs, EvalImagesArgs, EvalModelArgs, ExtractArgs, PlotColorsArgs,
    PredictArgs, TrainArgs, Variant,
};

const EXIT_IO: u8 = 2;
const EXIT_EMPTY_CORPUS: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_PALETTE: u8 = 5;
const EXIT_CAP: u8 = 6;

pub struct CliError {
    pub message: String,
    pub code: u8,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            code,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        Self::new(EXIT_IO, err.to_string())
    }
}

impl From<ExtractError> for CliError {
    fn from(err: ExtractError) -> Self {
        let code = match &err {
            ExtractError::Io(_) | ExtractError::Decode(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Self::new(code, err.to_string())
    }
}

impl From<ColorError> for CliError {
    fn from(err: ColorError) -> Self {
        Self::new(EXIT_PALETTE, err.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(err: MetricsError) -> Self {
        Self::new(EXIT_CONFIG, err.to_string())
    }
}

impl From<McmError> for CliError {
    fn from(err: McmError) -> Self {
        let code = match &err {
            McmError::Io(_) => EXIT_IO,
            McmError::NoMaskedSlots | McmError::TooManyMasks { .. } | McmError::Color(_) => {
                EXIT_PALETTE
            }
            _ => EXIT_CONFIG,
        };
        Self::new(code, err.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(err: DatasetError) -> Self {
        let code = match &err {
            DatasetError::Io(_)
            | DatasetError::Parse { .. }
            | DatasetError::DuplicateId(_)
            | DatasetError::MissingEmbedding(_) => EXIT_IO,
            DatasetError::EmptyCorpus => EXIT_EMPTY_CORPUS,
            DatasetError::TooManyPoints { .. } => EXIT_CAP,
            DatasetError::Extract(inner) => return Self::from_extract_nested(inner),
            DatasetError::Mcm(_) | DatasetError::ShapeMismatch(_) | DatasetError::InvalidSplit(_) => {
                EXIT_CONFIG
            }
        };
        Self::new(code, err.to_string())
    }
}

impl CliError {
    fn from_extract_nested(err: &ExtractError) -> Self {
        let code = match err {
            ExtractError::Io(_) | ExtractError::Decode(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Self::new(code, err.to_string())
    }
}

pub fn extract(args: ExtractArgs) -> Result<(), CliError> {
    let img = load_image(&args.image)?;
    let palette = extract_palette(&img, args.k, args.seed)?;
    std::fs::write(&args.out, palette_json(&palette))?;
    println!("{}", palette.to_hex_strings().join(" "));
    Ok(())
}

fn palette_json(palette: &Palette) -> String {
    serde_json::to_string(palette).expect("palettes serialize") + "\n"
}

fn parse_split(spec: &str) -> Result<SplitSpec, CliError> {
    let parts: Vec<f64> = spec
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::new(EXIT_CONFIG, format!("bad --split {spec:?}: {e}")))?;
    if parts.len() != 3 {
        return Err(CliError::new(
            EXIT_CONFIG,
            format!("--split needs three fractions, got {spec:?}"),
        ));
    }
    Ok(SplitSpec::new(parts[0], parts[1], parts[2])?)
}

fn parse_shape(spec: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::new(EXIT_CONFIG, format!("bad --stub-cond {spec:?}, expected SxD"));
    let (s, d) = spec.split_once(['x', 'X']).ok_or_else(bad)?;
    let rows = s.trim().parse::<usize>().map_err(|_| bad())?;
    let cols = d.trim().parse::<usize>().map_err(|_| bad())?;
    if rows == 0 || cols == 0 {
        return Err(bad());
    }
    Ok((rows, cols))
}

pub fn build_dataset(args: BuildDatasetArgs) -> Result<(), CliError> {
    let split = parse_split(&args.split)?;
    let report = build_manifest(&args.images, &args.captions, 5, split, args.seed)?;
    let mut records = report.records;

    let manifest_dir = args
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    if let Some(shape) = &args.stub_cond {
        let (rows, cols) = parse_shape(shape)?;
        attach_conditions(&mut records, &CondSource::Stub, rows, cols, &manifest_dir)?;
    } else if let Some(dir) = &args.cond_dir {
        let cols = probe_external_cols(dir, &records)?;
        attach_conditions(
            &mut records,
            &CondSource::ExternalDir(dir.clone()),
            0,
            cols,
            &manifest_dir,
        )?;
    }

    save_manifest(&records, &args.out)?;
    let count = |s: Split| records.iter().filter(|r| r.split == s).count();
    println!(
        "wrote {} records ({} train / {} val / {} test, {} skipped) to {}",
        records.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        report.skipped,
        args.out.display()
    );
    Ok(())
}

/// Width of the first available external embedding; attach_conditions then
/// checks every other file against it.
fn probe_external_cols(dir: &Path, records: &[ManifestRecord]) -> Result<usize, CliError> {
    for record in records {
        let path = dir.join(format!("{}.pteb", record.id));
        if path.is_file() {
            return Ok(read_pteb(&path)?.cols());
        }
    }
    Err(CliError::new(
        EXIT_IO,
        format!("no .pteb files for any record in {}", dir.display()),
    ))
}

/// Hyperparameters accepted in the `--config` JSON file. Everything
/// defaults to the standard model/training settings.
#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    d_model: usize,
    n_layers: usize,
    n_heads: usize,
    d_ff: Option<usize>,
    seq_len: usize,
    dropout: f64,
    learning_rate: f64,
    batch_size: usize,
    max_epochs: usize,
    patience: usize,
    mask_min: usize,
    mask_max: usize,
}

impl Default for FileConfig {
    fn default() -> Self {
        let mcm = McmConfig::default();
        let tc = TrainConfig::default();
        Self {
            d_model: mcm.d_model,
            n_layers: mcm.n_layers,
            n_heads: mcm.n_heads,
            d_ff: None,
            seq_len: mcm.seq_len,
            dropout: mcm.dropout,
            learning_rate: tc.learning_rate,
            batch_size: tc.batch_size,
            max_epochs: tc.max_epochs,
            patience: tc.patience,
            mask_min: tc.mask_min,
            mask_max: tc.mask_max,
        }
    }
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::new(EXIT_CONFIG, format!("bad --config: {e}")))
        }
    }
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf()
}

fn resolve_cond_path(manifest_dir: &Path, cond_path: &str) -> PathBuf {
    let p = Path::new(cond_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_dir.join(p)
    }
}

fn records_to_examples(
    records: &[ManifestRecord],
    manifest_dir: &Path,
    with_conds: bool,
) -> Result<Vec<TrainExample>, CliError> {
    records
        .iter()
        .map(|record| {
            let cond = if with_conds {
                let cond_path = record.cond_path.as_ref().ok_or_else(|| {
                    CliError::new(
                        EXIT_CONFIG,
                        format!("{}: {} (record {})", McmError::MissingCondition, "record has no cond_path", record.id),
                    )
                })?;
                Some(read_pteb(&resolve_cond_path(manifest_dir, cond_path))?)
            } else {
                None
            };
            Ok(TrainExample {
                palette: record.palette.clone(),
                cond,
            })
        })
        .collect()
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let file_cfg = load_file_config(args.config.as_ref())?;
    let records = load_manifest(&args.manifest)?;
    let dir = manifest_dir(&args.manifest);
    let conditioned = args.variant == Variant::Cond;

    let select = |split: Split| -> Vec<ManifestRecord> {
        records.iter().filter(|r| r.split == split).cloned().collect()
    };
    let train_records = select(Split::Train);
    let val_records = select(Split::Val);
    if train_records.is_empty() || val_records.is_empty() {
        return Err(CliError::new(
            EXIT_CONFIG,
            "manifest needs non-empty train and val splits",
        ));
    }

    let train_set = records_to_examples(&train_records, &dir, conditioned)?;
    let val_set = records_to_examples(&val_records, &dir, conditioned)?;

    let cond_dim = if conditioned {
        train_set[0].cond.as_ref().map(|c| c.cols()).unwrap_or(0)
    } else {
        0
    };
    let cfg = McmConfig {
        d_model: file_cfg.d_model,
        n_layers: file_cfg.n_layers,
        n_heads: file_cfg.n_heads,
        d_ff: file_cfg.d_ff.unwrap_or(4 * file_cfg.d_model),
        seq_len: file_cfg.seq_len,
        conditioning: if conditioned {
            Conditioning::Cross
        } else {
            Conditioning::None
        },
        cond_dim,
        dropout: file_cfg.dropout,
        ..McmConfig::default()
    };
    let tcfg = TrainConfig {
        learning_rate: file_cfg.learning_rate,
        batch_size: file_cfg.batch_size,
        max_epochs: file_cfg.max_epochs,
        patience: file_cfg.patience,
        mask_min: file_cfg.mask_min,
        mask_max: file_cfg.mask_max,
        seed: args.seed,
    };

    let (params, history) = train_model::<f32>(cfg, tcfg, &train_set, &val_set)?;
    save_checkpoint(&params, &args.out)?;

    let mut csv = String::from("epoch,train_loss,val_loss,val_acc1\n");
    for (i, ((tl, vl), va)) in history
        .train_loss
        .iter()
        .zip(&history.val_loss)
        .zip(&history.val_accuracy)
        .enumerate()
    {
        writeln!(csv, "{},{},{},{}", i + 1, tl, vl, va).expect("string write");
    }
    let history_path = history_csv_path(&args.out);
    std::fs::write(&history_path, csv)?;

    println!(
        "trained {} epochs (best {}), final val_acc1 {:.4}; checkpoint {} history {}",
        history.epochs(),
        history.best_epoch,
        history.val_accuracy.last().copied().unwrap_or(0.0),
        args.out.display(),
        history_path.display()
    );
    Ok(())
}

fn history_csv_path(ckpt: &Path) -> PathBuf {
    let mut os = ckpt.as_os_str().to_os_string();
    os.push(".history.csv");
    PathBuf::from(os)
}

fn load_optional_cond(path: Option<&PathBuf>) -> Result<Option<ConditionEmbedding>, CliError> {
    path.map(|p| read_pteb(p)).transpose().map_err(Into::into)
}

pub fn predict(args: PredictArgs) -> Result<(), CliError> {
    let params = load_checkpoint(&args.ckpt)?;
    let text = std::fs::read_to_string(&args.palette)?;
    let slots = parse_palette_slots(&text)?;
    if slots.iter().all(|s| s.is_some()) {
        return Err(McmError::NoMaskedSlots.into());
    }
    let cond = load_optional_cond(args.cond.as_ref())?;
    let completed = predict_masked(&params, &slots, cond.as_ref(), PredictStrategy::Greedy)?;
    std::fs::write(&args.out, palette_json(&completed))?;
    println!("{}", completed.to_hex_strings().join(" "));
    Ok(())
}

pub fn eval_model(args: EvalModelArgs) -> Result<(), CliError> {
    let params = load_checkpoint(&args.ckpt)?;
    let records = load_manifest(&args.manifest)?;
    let dir = manifest_dir(&args.manifest);
    let split = Split::parse(&args.split)
        .ok_or_else(|| CliError::new(EXIT_CONFIG, format!("unknown split {:?}", args.split)))?;
    let selected: Vec<ManifestRecord> = records
        .iter()
        .filter(|r| r.split == split)
        .cloned()
        .collect();
    let seeds: Vec<u64> = args
        .seeds
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::new(EXIT_CONFIG, format!("bad --seeds: {e}")))?;

    let conditioned = params.config.conditioning == Conditioning::Cross;
    let examples = records_to_examples(&selected, &dir, conditioned)?;
    let rows = evaluate_grid(&params, &examples, &seeds)?;

    let mut csv = String::from("n_mask,accuracy_pct,mean_dccw\n");
    println!("n_mask  accuracy(%)@1  DCCW@1");
    for row in &rows {
        writeln!(csv, "{},{},{}", row.n_mask, row.accuracy * 100.0, row.mean_dccw)
            .expect("string write");
        println!(
            "{:>6}  {:>13.2}  {:>6.2}",
            row.n_mask,
            row.accuracy * 100.0,
            row.mean_dccw
        );
    }
    std::fs::write(&args.out, csv)?;
    Ok(())
}

fn format_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

pub fn eval_images(args: EvalImagesArgs) -> Result<(), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(&args.pairs)
        .map_err(|e| CliError::new(EXIT_IO, format!("cannot read --pairs: {e}")))?;

    let mut out = csv::WriterBuilder::new()
        .from_path(&args.out)
        .map_err(|e| CliError::new(EXIT_IO, format!("cannot write --out: {e}")))?;
    out.write_record(["id", "hist_bha", "dccw", "psnr", "ssim", "error"])
        .map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;

    let mut sums = [0.0f64; 4];
    let mut succeeded = 0usize;
    let mut total = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| CliError::new(EXIT_IO, format!("bad pairs CSV: {e}")))?;
        if record.len() < 2 || record.len() > 3 {
            return Err(CliError::new(
                EXIT_IO,
                format!("pairs CSV rows need 2 or 3 fields, got {}", record.len()),
            ));
        }
        total += 1;
        let gen_path = record[0].to_string();
        let ref_path = record[1].to_string();
        let palette_path = record.get(2).filter(|s| !s.is_empty()).map(str::to_string);

        match evaluate_pair(&gen_path, &ref_path, palette_path.as_deref()) {
            Ok(m) => {
                sums[0] += m.hist_bha;
                sums[1] += m.dccw;
                sums[2] += m.psnr;
                sums[3] += m.ssim;
                succeeded += 1;
                out.write_record([
                    gen_path.as_str(),
                    &format_metric(m.hist_bha),
                    &format_metric(m.dccw),
                    &format_metric(m.psnr),
                    &format_metric(m.ssim),
                    "",
                ])
                .map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
            }
            Err(err) => {
                out.write_record([gen_path.as_str(), "", "", "", "", &err])
                    .map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
            }
        }
    }
    if succeeded == 0 {
        return Err(CliError::new(
            EXIT_IO,
            format!("no pair succeeded out of {total}"),
        ));
    }
    let n = succeeded as f64;
    out.write_record([
        "mean",
        &format_metric(sums[0] / n),
        &format_metric(sums[1] / n),
        &format_metric(sums[2] / n),
        &format_metric(sums[3] / n),
        "",
    ])
    .map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
    out.flush().map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
    println!(
        "evaluated {succeeded}/{total} pairs -> {}",
        args.out.display()
    );
    Ok(())
}

/// Per-pair metrics; errors come back as strings for the CSV error column.
fn evaluate_pair(
    gen_path: &str,
    ref_path: &str,
    palette_path: Option<&str>,
) -> Result<palkit::metrics::MetricsRecord, String> {
    let fail = |e: &dyn std::fmt::Display| e.to_string();
    let gen_img = load_image(Path::new(gen_path)).map_err(|e| fail(&e))?;
    let ref_img = load_image(Path::new(ref_path)).map_err(|e| fail(&e))?;

    let hist_gen = color_histogram(&gen_img, DEFAULT_HIST_BINS);
    let hist_ref = color_histogram(&ref_img, DEFAULT_HIST_BINS);
    let hist_bha = bhattacharyya_distance(&hist_gen, &hist_ref).map_err(|e| fail(&e))?;

    let gen_palette = extract_palette(&gen_img, 5, 0).map_err(|e| fail(&e))?;
    let ref_palette = match palette_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| fail(&e))?;
            parse_palette(&text).map_err(|e| fail(&e))?
        }
        None => extract_palette(&ref_img, 5, 0).map_err(|e| fail(&e))?,
    };
    let dccw_value = dccw(&gen_palette, &ref_palette).map_err(|e| fail(&e))?;
    let psnr_value = psnr(&gen_img, &ref_img).map_err(|e| fail(&e))?;
    let ssim_value = ssim(&gen_img, &ref_img).map_err(|e| fail(&e))?;

    Ok(palkit::metrics::MetricsRecord {
        hist_bha,
        dccw: dccw_value,
        psnr: psnr_value,
        ssim: ssim_value,
    })
}

pub fn embed(args: EmbedArgs) -> Result<(), CliError> {
    let params = load_checkpoint(&args.ckpt)?;
    let text = std::fs::read_to_string(&args.palette)?;
    let slots = parse_palette_slots(&text)?;
    let colors: Option<Vec<_>> = slots.iter().copied().collect();
    let palette = match colors {
        Some(colors) => Palette::new(colors).map_err(CliError::from)?,
        None => {
            return Err(CliError::new(
                EXIT_PALETTE,
                "embed requires a full palette (no null slots)",
            ))
        }
    };
    let cond = load_optional_cond(args.cond.as_ref())?;
    let embedding = embed_palette(&params, &palette, cond.as_ref())?;
    let emb = ConditionEmbedding::new(1, embedding.len(), embedding)?;
    write_pteb(&args.out, &emb)?;
    println!("wrote 1x{} embedding to {}", emb.cols(), args.out.display());
    Ok(())
}

pub fn plot_colors(args: PlotColorsArgs) -> Result<(), CliError> {
    let records = load_manifest(&args.manifest)?;
    let method = match args.method {
        crate::Method::Pca => ProjectionMethod::Pca,
        crate::Method::Tsne => ProjectionMethod::Tsne,
    };
    let projected = project_colors_2d(&records, method, args.seed)?;

    let csv_path = args.out.with_extension("csv");
    let svg_path = args.out.with_extension("svg");
    write_projection_csv(&csv_path, &projected)?;
    write_projection_svg(&svg_path, &projected)?;
    println!(
        "projected {} distinct colors -> {} and {}",
        projected.len(),
        csv_path.display(),
        svg_path.display()
    );
    Ok(())
}
