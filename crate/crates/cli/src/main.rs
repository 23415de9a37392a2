mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Cohort(#[from] berksurv::cohort::CohortError),
    #[error(transparent)]
    Measurement(#[from] berksurv::measurement::MeasurementError),
    #[error(transparent)]
    Sampler(#[from] berksurv::sampler::SamplerError),
    #[error(transparent)]
    Sim(#[from] berksurv::simgen::SimError),
    #[error(transparent)]
    Diagnostics(#[from] berksurv::diagnostics::DiagnosticsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Parser)]
#[command(name = "berksurv", version, about = "Measurement-error corrected survival analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate replicate synthetic cohorts with their true exposures.
    Simulate(SimulateArgs),
    /// Run the MCMC sampler on one or more cohorts.
    Fit(FitArgs),
    /// Per-parameter R-hat of a fit.
    Diagnose(FitDirArgs),
    /// Posterior summaries of a fit, or performance measures of a batch.
    Summarize(SummarizeArgs),
    /// Violin and trace coordinates for external plotting.
    PlotData(PlotArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Measurement-model registry (TOML).
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Cohort table layout (TOML).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Datasets processed at once; 0 uses every core.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, short = 'n')]
    pub replicates: Option<u64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Misspecification flag applied to the generating model (repeatable).
    #[arg(long = "misspecify")]
    pub misspecify: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Cohort directory (repeatable).
    #[arg(long)]
    pub cohort: Vec<PathBuf>,
    /// Fit every `rep_*` directory below this one.
    #[arg(long, conflicts_with = "cohort")]
    pub batch: Option<PathBuf>,
    /// Condition on observed exposures; no correction.
    #[arg(long, conflicts_with = "true_exposure")]
    pub naive: bool,
    /// Condition on the true exposures of a simulated cohort.
    #[arg(long)]
    pub true_exposure: bool,
    /// Truth table for --true-exposure; defaults to `truth.csv` in the cohort.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Excess hazard ratio model instead of proportional hazards.
    #[arg(long)]
    pub ehr: bool,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub adapt_phases: Option<usize>,
    #[arg(long)]
    pub adapt_phase_len: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitDirArgs {
    /// Fit output directory.
    #[arg(long)]
    pub fit: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long, required_unless_present = "batch")]
    pub fit: Option<PathBuf>,
    /// Simulation root holding `rep_*` directories with fits.
    #[arg(long, conflicts_with = "fit")]
    pub batch: Option<PathBuf>,
    /// True β; read from each replicate's scenario when absent.
    #[arg(long)]
    pub beta_true: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub fit: PathBuf,
    /// Parameter columns to emit (repeatable); default `beta`.
    #[arg(long)]
    pub parameter: Vec<String>,
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::Summarize(a) => commands::summarize(&a),
        Command::PlotData(a) => commands::plot_data(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
