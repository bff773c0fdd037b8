//! `palkit` command line: palette extraction, dataset building, masked
//! color model training/evaluation, and batch colorization metrics.
//!
//! Exit codes: 0 success, 2 IO/decode, 3 empty corpus, 4 config/model,
//! 5 bad palette input, 6 resource cap.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "palkit",
    version,
    about = "Palette extraction, masked color modeling, and color-control metrics"
)]
struct Cli {
    /// Increase log verbosity on stderr (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a k-color palette from an image via K-means in CIELAB
    Extract(ExtractArgs),
    /// Build a palette-text-image manifest from images and captions
    BuildDataset(BuildDatasetArgs),
    /// Train a masked color model on a manifest
    Train(TrainArgs),
    /// Fill null palette slots with a trained model
    Predict(PredictArgs),
    /// Accuracy@1 and DCCW grid for 1-5 masked colors
    EvalModel(EvalModelArgs),
    /// Batch color metrics over generated/reference image pairs
    EvalImages(EvalImagesArgs),
    /// Export a palette embedding as a PTEB file
    Embed(EmbedArgs),
    /// Project manifest palette colors to 2D (CSV and SVG scatter)
    PlotColors(PlotColorsArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Input image (PNG or JPEG)
    #[arg(long)]
    image: PathBuf,
    /// Palette size
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// K-means seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output palette JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildDatasetArgs {
    /// Directory of corpus images
    #[arg(long)]
    images: PathBuf,
    /// Captions file: `filename<TAB>caption` per line
    #[arg(long)]
    captions: PathBuf,
    /// Output manifest (JSONL)
    #[arg(long)]
    out: PathBuf,
    /// Train,val,test fractions
    #[arg(long, default_value = "0.8,0.1,0.1")]
    split: String,
    /// Shuffle and extraction seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generate stub condition embeddings of this shape (e.g. 4x32)
    #[arg(long, conflicts_with = "cond_dir")]
    stub_cond: Option<String>,
    /// Directory of pre-computed `<id>.pteb` condition files
    #[arg(long)]
    cond_dir: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Variant {
    /// Self-attention over color tokens only
    PaletteOnly,
    /// Cross-attention to per-record condition embeddings
    Cond,
}

#[derive(Args)]
struct TrainArgs {
    /// Training manifest (JSONL with train and val splits)
    #[arg(long)]
    manifest: PathBuf,
    /// Model variant
    #[arg(long, value_enum, default_value_t = Variant::PaletteOnly)]
    variant: Variant,
    /// JSON file overriding model/training hyperparameters
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output checkpoint path (history CSV lands at <out>.history.csv)
    #[arg(long)]
    out: PathBuf,
    /// Training seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Palette JSON with null entries marking masked slots
    #[arg(long)]
    palette: PathBuf,
    /// Condition embedding (PTEB), required for conditioned checkpoints
    #[arg(long)]
    cond: Option<PathBuf>,
    /// Output palette JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalModelArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Evaluation manifest (JSONL)
    #[arg(long)]
    manifest: PathBuf,
    /// Split to evaluate
    #[arg(long, default_value = "test")]
    split: String,
    /// Comma-separated masking seeds
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    /// Output grid CSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalImagesArgs {
    /// Pairs CSV: gen_path,ref_path[,ref_palette_json]
    #[arg(long)]
    pairs: PathBuf,
    /// Output metrics CSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Full palette JSON (no null slots)
    #[arg(long)]
    palette: PathBuf,
    /// Condition embedding (PTEB), required for conditioned checkpoints
    #[arg(long)]
    cond: Option<PathBuf>,
    /// Output PTEB path (1 x d_model)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Method {
    Pca,
    Tsne,
}

#[derive(Args)]
struct PlotColorsArgs {
    /// Manifest to visualize
    #[arg(long)]
    manifest: PathBuf,
    /// Projection method
    #[arg(long, value_enum, default_value_t = Method::Pca)]
    method: Method,
    /// Projection seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix: writes <out>.csv and <out>.svg
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let result = match cli.command {
        Command::Extract(args) => commands::extract(args),
        Command::BuildDataset(args) => commands::build_dataset(args),
        Command::Train(args) => commands::train(args),
        Command::Predict(args) => commands::predict(args),
        Command::EvalModel(args) => commands::eval_model(args),
        Command::EvalImages(args) => commands::eval_images(args),
        Command::Embed(args) => commands::embed(args),
        Command::PlotColors(args) => commands::plot_colors(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
