//! `remix`: train and compare mixed-policy proximal policy gradient runs on
//! verifiable token tasks.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 runtime abort.

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "remix", version, about = "Mix-policy RFT lab runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run from a config file
    Train {
        /// Config file (key = value lines)
        #[arg(long)]
        config: PathBuf,
        /// Output directory for metrics and checkpoints
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Override the config's first seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint with greedy decoding
    Eval {
        /// Checkpoint JSON written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional config whose task overrides the checkpoint's
        #[arg(long)]
        config: Option<PathBuf>,
        /// Evaluation set size
        #[arg(long, default_value_t = 200)]
        k: usize,
    },
    /// Run several configs over a seed sweep and summarize efficiency
    Compare {
        /// Config files (repeat; at least two)
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Output directory
        #[arg(long, default_value = "runs/compare")]
        out: PathBuf,
        /// Comma-separated seed list overriding the first config's seeds
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Pass@1 thresholds for rollouts-to-threshold stats (repeatable)
        #[arg(long = "threshold", default_values_t = vec![0.95])]
        thresholds: Vec<f64>,
    },
    /// Plot pass@1 vs fresh rollouts from existing metrics CSVs
    Plot {
        /// Metrics CSV files (repeat)
        #[arg(long = "csv", required = true)]
        csvs: Vec<PathBuf>,
        /// Output directory
        #[arg(long, default_value = "runs/plots")]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REMIX_LOG_LEVEL", "warn"))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, out, seed } => remix_cli::commands::train(&config, &out, seed),
        Command::Eval {
            checkpoint,
            config,
            k,
        } => remix_cli::commands::eval(&checkpoint, config.as_deref(), k),
        Command::Compare {
            configs,
            out,
            seeds,
            thresholds,
        } => remix_cli::commands::compare(&configs, &out, seeds, &thresholds),
        Command::Plot { csvs, out } => remix_cli::commands::plot(&csvs, &out),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(if e.is_config() { 2 } else { 3 });
    }
}
