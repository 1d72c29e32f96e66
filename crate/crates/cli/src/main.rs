//! `logodet`: batch entry point for the logo detection pipeline.
//!
//! Every subcommand reads one JSON config (plus `--set` overrides), works
//! inside a single output directory and leaves a manifest under
//! `manifests/`. Exit status: 0 on success, 1 for invalid configuration or
//! arguments, 2 for failures while running.

mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use logodet::eval::SweepAxis;

pub use context::Failure;

/// Environment variable naming the default output directory.
pub const OUTPUT_ROOT_ENV: &str = "LOGODET_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "logodet", version, about = "Region-based logo detection and brand recognition")]
pub struct Cli {
    /// JSON run configuration; absent keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.iterations=500`. Values
    /// are parsed as JSON, falling back to a plain string. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Top-level seed; replaces the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory. Defaults to $LOGODET_OUTPUT_ROOT, then ./logodet-out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset into `<out>/dataset`.
    Synth,
    /// Partition the dataset into train / val / test annotation files.
    Split,
    /// Print dataset statistics as JSON and write `stats.csv`.
    Stats {
        /// Dataset root; defaults to `<out>/dataset`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// `all` or a split name.
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Selective-search proposals for every image of a split.
    Propose {
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Train the detector on a split; writes `model.ckpt` and `loss.csv`.
    Train {
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Run a checkpoint over a split; writes detections as JSON lines.
    Detect {
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output file inside the output directory.
        #[arg(long, default_value = "detections.jsonl")]
        output: String,
    },
    /// Truncated-SVD compression of the fully connected layers.
    Compress {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also compare dense and compressed detectors on a split.
        #[arg(long)]
        compare: bool,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Score detections against ground truth; writes the AP and brand tables.
    Evaluate {
        /// Dataset root; defaults to `<out>/dataset`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        detections: Option<PathBuf>,
        /// IoU threshold; replaces `eval.iou_threshold`.
        #[arg(long)]
        iou: Option<f64>,
        /// Overlay PNGs drawn for the first N images.
        #[arg(long, default_value_t = 8)]
        overlays: usize,
    },
    /// Evaluate the pipeline along one parameter axis.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated, ascending.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Model reused by axes that do not retrain; defaults to `<out>/model.ckpt` when present.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time the inference stages in both pipeline modes.
    Benchmark {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
