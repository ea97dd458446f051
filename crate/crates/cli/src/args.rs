use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "wfi", version, about = "Neural-field full waveform inversion of voids in 2D specimens")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of voided specimens and their traces.
    GenData(GenDataArgs),
    /// Pretrain the network on the first N_D training samples.
    Pretrain(PretrainArgs),
    /// Invert one sample, from scratch or from a pretrained checkpoint.
    Invert(InvertArgs),
    /// Aggregate inversion histories into a CSV, plots and field mosaics.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing outputs whose contents differ.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of training samples; config value when omitted.
    #[arg(long = "n-d")]
    pub n_d: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Use a dataset generated under a different config.
    #[arg(long)]
    pub allow_config_mismatch: bool,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub sample: usize,
    /// Pretrained checkpoint to start from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Number of leading layers kept fixed.
    #[arg(long)]
    pub freeze: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Keep iterating after the AP target is reached.
    #[arg(long)]
    pub no_early_stop: bool,
    /// Store the predicted field every this many epochs.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Record per-epoch wall time (makes histories non-reproducible).
    #[arg(long)]
    pub wall_time: bool,
    /// Group name used by report; derived from the checkpoint when omitted.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub allow_config_mismatch: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories written by invert.
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}
