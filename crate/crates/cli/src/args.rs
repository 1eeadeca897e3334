use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hsi-bench", version, about = "Hyperspectral image classification benchmark")]
pub struct Cli {
    /// Root of the downloaded data cache.
    #[arg(long, global = true, env = "HSI_BENCH_CACHE", default_value = "hsi_cache")]
    pub cache: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch and verify the assets of one configuration.
    Download {
        #[arg(long)]
        config: String,
    },
    /// Write the split membership of one configuration in text form.
    Splits {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
        /// Synthetic scene file standing in for the manifest.
        #[arg(long)]
        synthetic: Option<PathBuf>,
    },
    /// Train every (configuration, model, seed) cell of an experiment.
    Run(RunArgs),
    /// Jointly train one backbone per (model, seed) on the pretraining configurations.
    Pretrain(RunArgs),
    /// Fine-tune pretrained checkpoints on the experiment configurations.
    Finetune(RunArgs),
    /// Aggregate a results file into ranking tables and CSVs.
    Report {
        results: PathBuf,
        /// Directory for the CSV tables; defaults to the results file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List known configuration ids and models.
    List,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment description (TOML).
    pub experiment: PathBuf,
    /// Replace the experiment's configuration list.
    #[arg(long = "config")]
    pub configs: Vec<String>,
    /// Replace the experiment's model list.
    #[arg(long = "model")]
    pub models: Vec<String>,
    /// Replace the experiment's seed list.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Output directory for results and checkpoints.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Synthetic scene file standing in for the manifest.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
}
