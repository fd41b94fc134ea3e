//! `aoi`: generate synthetic worlds, train and evaluate the polygon model,
//! run ablations and the reliability cascade, and export overlays.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "aoi", version, about = "AOI boundary regression from imagery and geographic priors")]
pub struct Cli {
    /// Worker threads (1 forces sequential execution).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train the polygon model and evaluate it next to the Road-cut baseline.
    Train(TrainArgs),
    /// Modality drops on a trained model plus an N sweep.
    Ablate(AblateArgs),
    /// Train and evaluate the reliability cascade.
    Reliability(ReliabilityArgs),
    /// Write per-sample GeoJSON and SVG overlays of predictions.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created when missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DataArg {
    /// Dataset directory written by `gen`.
    #[arg(long, env = "AOI_DATA_ROOT")]
    pub data: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Comma-separated category codes (0-19).
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(0..20))]
    pub categories: Option<Vec<u8>>,
    /// Raster side length in pixels.
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArg,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArg,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Trained checkpoint for the modality rows (trained here when absent).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Boundary-node counts of the N sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16, 24, 32])]
    pub n_values: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ReliabilityArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArg,
    /// Polygon model whose decoder embedding feeds the cascade.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Precision the reported threshold must reach.
    #[arg(long, default_value_t = 0.8)]
    pub target_precision: f64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Export at most this many validation samples.
    #[arg(long)]
    pub limit: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
