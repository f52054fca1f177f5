//! `adcast`: ingest repost logs, fit and calibrate the activation-decay
//! model, predict, evaluate, and run reproducible sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "adcast", version, about = "Activation-decay popularity forecasting")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Times are in seconds.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat TOML file with defaults for any of these flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Bin width(s) in seconds; comma separated for sweeps.
    #[arg(long, global = true, value_delimiter = ',')]
    pub granularity: Vec<u64>,
    /// Observation window(s) in seconds; comma separated for sweeps.
    #[arg(long = "t-known", global = true, value_delimiter = ',')]
    pub t_known: Vec<u64>,
    /// Prediction horizon in seconds [default: 604800].
    #[arg(long, global = true)]
    pub horizon: Option<u64>,
    /// Chronological training fraction [default: 0.75].
    #[arg(long, global = true)]
    pub split: Option<f64>,
    /// ad, baseline or both [default: both].
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Random seed for `synth` [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: .].
    #[arg(long = "out-dir", global = true)]
    pub out_dir: Option<PathBuf>,
    /// standard or as_written [default: standard].
    #[arg(long = "tic-variant", global = true)]
    pub tic_variant: Option<String>,
    /// Event log (JSON lines or .csv).
    #[arg(long, global = true)]
    pub events: Option<PathBuf>,
    /// Releases CSV `id,release`.
    #[arg(long, global = true)]
    pub releases: Option<PathBuf>,
    /// Event timestamps are already relative to each release.
    #[arg(long = "zero-based", global = true)]
    pub zero_based: bool,
    /// wechat or weibo [default: wechat].
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Shape fitting route: nls or r-index [default: nls].
    #[arg(long, global = true)]
    pub route: Option<String>,
    /// Least-squares weighting: uniform or inverse-variance [default: uniform].
    #[arg(long, global = true, alias = "weight")]
    pub weighting: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known ground truth.
    Synth {
        #[arg(long = "n-messages")]
        n_messages: Option<usize>,
        /// Also write every message's per-bin means (large).
        #[arg(long = "truth-bins")]
        truth_bins: bool,
    },
    /// Normalize and bin an event log; write the average series.
    Ingest,
    /// Fit the population curve to the average series.
    Fit,
    /// Train on the chronological training split and write model JSON.
    Train,
    /// Predict totals from a trained model.
    Predict {
        /// Model JSON written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Messages to predict: test, train or all.
        #[arg(long, default_value = "test")]
        subset: String,
        /// Add real totals, APE and peak class from the full-horizon events.
        #[arg(long = "with-truth")]
        with_truth: bool,
    },
    /// Score a predictions CSV that carries ground truth.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Rebuild report CSVs from a sweep results file.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
    /// Train and evaluate every (granularity, t_known, method) cell.
    Sweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config::FileConfig::load_optional(cli.common.config.as_deref())
        .and_then(|file| commands::Settings::resolve(&cli.common, file))
        .and_then(|settings| match cli.command {
            Command::Synth { n_messages, truth_bins } => commands::synth(&settings, n_messages, truth_bins),
            Command::Ingest => commands::ingest(&settings),
            Command::Fit => commands::fit(&settings),
            Command::Train => commands::train(&settings),
            Command::Predict {
                model,
                subset,
                with_truth,
            } => commands::predict(&settings, &model, &subset, with_truth),
            Command::Evaluate { predictions } => commands::evaluate(&settings, &predictions),
            Command::Report { results } => commands::report(&settings, &results),
            Command::Sweep => commands::sweep(&settings),
        });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
