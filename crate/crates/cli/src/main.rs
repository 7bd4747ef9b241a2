use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

mod commands;
mod manifest;

/// Worker-count override for the thread pool.
pub const THREADS_ENV: &str = "INCIDENCE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "incidence", version, about = "Competing-risks survival models with IPCW-weighted boosting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a Weibull competing-risks dataset.
    Generate(GenerateArgs),
    /// Train a MultiIncidence model on a dataset CSV.
    Fit(FitArgs),
    /// Predict survival and incidence at given horizons.
    Predict(PredictArgs),
    /// Score a model or a prediction file on a dataset.
    Evaluate(EvaluateArgs),
    /// Simulate, fit and score over a grid of settings.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Number of rows.
    #[arg(long, value_parser = positive_usize)]
    pub n: usize,
    /// Number of competing events.
    #[arg(long, default_value_t = 3, value_parser = positive_usize)]
    pub events: usize,
    /// Number of covariates.
    #[arg(long, default_value_t = 10)]
    pub features: usize,
    /// Leading covariates that drive censoring [default: min(6, features)].
    #[arg(long)]
    pub censoring_features: Option<usize>,
    /// Target censoring fraction in [0, 1).
    #[arg(long, default_value_t = 0.5, value_parser = censoring_rate)]
    pub censoring: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Points of the grid used for the oracle IBS in the side-car.
    #[arg(long, default_value_t = 100, value_parser = grid_points)]
    pub grid_points: usize,
    /// Dataset CSV to write; the side-car goes to `<output>.oracle.json`.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 0.1, value_parser = learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    pub n_iter: usize,
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    pub max_depth: usize,
    /// Horizons drawn per row per boosting round.
    #[arg(long, default_value_t = 2, value_parser = positive_usize)]
    pub n_times: usize,
    /// Censoring-model rounds before the first event round.
    #[arg(long, default_value_t = 20)]
    pub n_warmup: usize,
    #[arg(long, default_value_t = 1e-12, value_parser = clip_floor)]
    pub clip_floor: f64,
    /// Weight the event model with the marginal censoring Kaplan–Meier
    /// instead of the censoring model.
    #[arg(long)]
    pub marginal_censoring: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Dataset CSV with feature columns plus `duration` and `event`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model JSON to write.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Rows to predict; `duration`/`event` columns are optional.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated horizons.
    #[arg(long, value_delimiter = ',', required = true, value_parser = horizon)]
    pub horizons: Vec<f64>,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["model", "predictions"])))]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Prediction CSV as written by `predict`; its horizons serve as the
    /// IBS grid and as the pointwise horizons.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Side-car from `generate`; adds the oracle IBS and its gap.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Censoring weights: the marginal Kaplan–Meier, or the true law from
    /// the side-car.
    #[arg(long, value_enum, default_value_t = Weights::Km)]
    pub weights: Weights,
    #[arg(long, default_value_t = 100, value_parser = grid_points)]
    pub grid_points: usize,
    /// Node intervals of the interval-censored log score.
    #[arg(long, default_value_t = 32, value_parser = grid_points)]
    pub node_count: usize,
    #[arg(long, default_value_t = 1e-12, value_parser = clip_floor)]
    pub clip_floor: f64,
    /// Report JSON to write; the CSV goes next to it with `.csv`.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    Km,
    Oracle,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchmarkArgs {
    /// Training sizes.
    #[arg(long, value_delimiter = ',', default_value = "1000,5000,20000", value_parser = positive_usize)]
    pub n: Vec<usize>,
    /// Training censoring rates.
    #[arg(long, value_delimiter = ',', default_value = "0.5", value_parser = censoring_rate)]
    pub censoring: Vec<f64>,
    /// Feature counts.
    #[arg(long, value_delimiter = ',', default_value = "10", value_parser = positive_usize)]
    pub d: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seed: Vec<u64>,
    #[arg(long, default_value_t = 3, value_parser = positive_usize)]
    pub events: usize,
    #[arg(long, default_value_t = 5000, value_parser = positive_usize)]
    pub n_test: usize,
    #[arg(long, default_value_t = 100, value_parser = grid_points)]
    pub grid_points: usize,
    /// Score on a test sample censored like the training sample instead of
    /// an uncensored one.
    #[arg(long)]
    pub censored_test: bool,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Tidy results CSV.
    #[arg(long, short)]
    pub output: PathBuf,
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("{e}"))?;
    if v.is_nan() {
        return Err("must be a number".into());
    }
    Ok(v)
}

fn learning_rate(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err("learning rate must lie in (0, 1]".into())
    }
}

fn clip_floor(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err("clip floor must lie in (0, 1)".into())
    }
}

fn censoring_rate(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err("censoring rate must lie in [0, 1)".into())
    }
}

fn horizon(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err("horizons must be non-negative".into())
    }
}

fn grid_points(s: &str) -> Result<usize, String> {
    let v = positive_usize(s)?;
    if v >= 2 {
        Ok(v)
    } else {
        Err("need at least two points".into())
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let threads: usize = raw
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Generate(args) => commands::generate(&args),
        Command::Fit(args) => commands::fit(&args),
        Command::Predict(args) => commands::predict(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::Benchmark(args) => commands::benchmark(&args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
