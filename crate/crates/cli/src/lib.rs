//! Command-line pipelines: ingest, effect estimation, synthetic data,
//! training, evaluation, equity and misalignment reports, gradient checks.

mod commands;
pub mod config;
mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "effalign", version, about = "Attribute-effect estimation, alignment training and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub survey: Option<PathBuf>,
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Skip bad rows instead of failing.
    #[arg(long, global = true)]
    pub lenient: bool,
    #[arg(long, global = true)]
    pub min_support: Option<usize>,
    /// Worker threads for sweeps and diagnosis.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Also emit SVG charts where available.
    #[arg(long, global = true)]
    pub svg: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a survey file and write an ingestion report.
    Ingest,
    /// Write data-side effects for every supported edit.
    EstimateEffects,
    /// Sample a synthetic survey from random known effects.
    GenerateSynthetic(SyntheticArgs),
    /// Fit the surrogate model with the two-stage schedule.
    Train(TrainArgs),
    /// Score a model per (country, granularity) in table layout.
    Evaluate(EvaluateArgs),
    /// Score a model at every granularity, with per-persona detail.
    Sweep(ModelArgs),
    /// Tier means, gaps and gains from one or more score tables.
    EquityReport(EquityArgs),
    /// Misalignment labels per (country, topic, attribute).
    Diagnose(DiagnoseArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    /// Comma-separated country codes.
    #[arg(long, value_delimiter = ',')]
    pub countries: Option<Vec<String>>,
    #[arg(long)]
    pub cell_size: Option<usize>,
    #[arg(long)]
    pub questions: Option<usize>,
    #[arg(long)]
    pub options: Option<usize>,
    /// `random` or `quota`.
    #[arg(long)]
    pub sampling: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs_stage1: Option<usize>,
    #[arg(long)]
    pub epochs_stage2: Option<usize>,
    /// `sequential` or `joint`.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// A full assignment to withhold, as comma-separated level labels. Repeatable.
    #[arg(long)]
    pub holdout: Vec<String>,
    /// Start from this checkpoint instead of zeros.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, conflicts_with_all = ["endpoint", "empirical"])]
    pub checkpoint: Option<PathBuf>,
    /// Base URL of a scoring server (POST /v1/score).
    #[arg(long, conflicts_with = "empirical")]
    pub endpoint: Option<String>,
    /// Fixture file: recorded to with --endpoint, replayed without it.
    #[arg(long, conflicts_with = "empirical")]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Use the survey's own subgroup distributions as the model.
    #[arg(long)]
    pub empirical: bool,
    /// Row label in score tables.
    #[arg(long)]
    pub model_name: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Granularity to score. Repeatable.
    #[arg(long = "granularity")]
    pub granularities: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct EquityArgs {
    /// Score table CSV. Repeatable; tables are merged.
    #[arg(long, required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub baseline: Option<String>,
    /// `max_min_country` or `tier_mean_difference`.
    #[arg(long)]
    pub gap: Option<String>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check at this checkpoint instead of random parameters.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Random parameter points to check.
    #[arg(long, default_value_t = 3)]
    pub points: usize,
}

/// Parses arguments and runs one subcommand.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                print!("{e}");
                return Ok(());
            }
            _ => {
                let text = e.to_string();
                let first = text.lines().next().unwrap_or_default();
                return Err(CliError::usage(first.trim_start_matches("error: ")));
            }
        },
    };
    commands::dispatch(cli)
}
