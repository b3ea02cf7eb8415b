//! Command line: `run`, `simulate`, `score` and `report`.
//!
//! Exit status is 0 on success, 2 for usage or configuration errors and 3
//! for failures while running.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use cfa_core::acquire::{AcquisitionRequest, Strategy};

use crate::config::{ConfigError, ExperimentConfig, WORKERS_ENV};
use crate::experiment::{run_experiment, simulate_one, RunError};
use crate::io::{self, CsvBuffer};
use crate::report;
use crate::score::{score, ScoreOptions};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "cfa", version, about = "Confounder feature acquisition for treatment effect estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a full experiment from a config file.
    Run(RunArgs),
    /// Write one simulated realization as CSV files.
    Simulate(SimulateArgs),
    /// Select a batch from the unlabeled rows of a dataset.
    Score(ScoreArgs),
    /// Rebuild the summary tables from an existing run's traces.
    Report(ReportArgs),
}

/// Config file plus overrides shared by the subcommands that read one.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON config; every field defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config field, e.g. `--set loop.batch_size=20` or
    /// `--set 'simulation.a_variant={"mode":"bivariate_gaussian","rho":0.4}'`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Base seed; realization `i` uses `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_realizations: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads across realizations.
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub sigma_ate_sq: Option<f64>,
    /// Comma-separated, e.g. `random,oe`.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<String>>,
    #[arg(long)]
    pub pct: Option<f64>,
    #[arg(long)]
    pub pca: bool,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// CSV with `id`, covariates, `t`, `y` and the confounder column (blank
    /// where unknown), as written by `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub strategy: String,
    /// Defaults to the config's `loop.batch_size`.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to the config's `simulation.confounder_column`.
    #[arg(long)]
    pub confounder: Option<String>,
    /// CSV of `id, p_a1, yhat_a1, yhat_a0` to score with instead of
    /// fitting models.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Write the batch here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding `traces.csv` and `trace_index.csv`.
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to the input directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub pct: f64,
    #[arg(long)]
    pub svg: bool,
}

/// A failure with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    }
}

fn config_error(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: e.to_string(),
    }
}

fn json(v: impl serde::Serialize) -> String {
    serde_json::to_string(&v).expect("serializes")
}

fn load(args: &ConfigArgs, extra: Vec<String>) -> Result<ExperimentConfig, ConfigError> {
    let mut overrides = args.overrides.clone();
    overrides.extend(extra);
    ExperimentConfig::load(args.config.as_deref(), &overrides)
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let mut extra = Vec::new();
    let mut push = |path: &str, v: Option<String>| {
        if let Some(v) = v {
            extra.push(format!("{path}={v}"));
        }
    };
    push("base_seed", a.seed.map(json));
    push("n_realizations", a.n_realizations.map(json));
    push("output_dir", a.output_dir.as_ref().map(json));
    push("workers", a.workers.map(json));
    push("loop.batch_size", a.batch_size.map(json));
    push("loop.max_iterations", a.max_iterations.map(json));
    push("loop.sigma_ate_sq", a.sigma_ate_sq.map(json));
    push("strategies", a.strategies.as_ref().map(json));
    push("pct", a.pct.map(json));
    push("pca", a.pca.then(|| json(true)));
    push("svg", a.svg.then(|| json(true)));
    let cfg = load(&a.config, extra)?;
    let manifest = run_experiment(&cfg)?;
    for f in &manifest.failures {
        log::warn!("{f}");
    }
    println!(
        "{} realizations, {} traces written to {}",
        cfg.n_realizations,
        cfg.n_realizations * cfg.strategies.len() * cfg.estimators.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let cfg = load(&a.config, Vec::new())?;
    for p in simulate_one(&cfg, a.seed, &a.output_dir)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<(), Failure> {
    let cfg = load(&a.config, Vec::new())?;
    let strategy = Strategy::parse(&a.strategy).ok_or_else(|| {
        config_error(format!(
            "unknown strategy `{}` (expected one of {})",
            a.strategy,
            Strategy::ALL.map(|s| s.as_str()).join(", ")
        ))
    })?;
    let estimator = cfg
        .estimators
        .first()
        .cloned()
        .ok_or_else(|| config_error("no estimator configured"))?;
    let request = AcquisitionRequest {
        strategy,
        batch_size: a.batch_size.unwrap_or(cfg.acquisition.batch_size),
        kernel: cfg.acquisition.kernel,
        scoring_mode: cfg.acquisition.scoring_mode,
    };
    if request.batch_size == 0 {
        return Err(config_error("batch size must be at least 1"));
    }
    let confounder = a.confounder.unwrap_or(cfg.simulation.confounder_column.clone());
    let data = io::load_partial_dataset(&a.data, &confounder).map_err(config_error)?;
    let predictions = match &a.predictions {
        Some(p) => Some(io::load_predictions(p).map_err(config_error)?),
        None => None,
    };
    let opts = ScoreOptions {
        request,
        seed: a.seed,
        estimator,
        forest: cfg.acquisition.attribute_model,
        predictions,
    };
    let batch = score(&data, &opts).map_err(runtime)?;
    let mut out = CsvBuffer::new(["rank", "id", "score"]);
    for (i, s) in batch.iter().enumerate() {
        out.row([
            (i + 1).to_string(),
            s.id.clone(),
            s.score.map(|v| v.to_string()).unwrap_or_default(),
        ]);
    }
    match &a.output {
        Some(p) => out.save(p).map_err(runtime)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&out.into_bytes()).map_err(runtime)?;
        }
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let traces = io::read_traces(&a.input.join("traces.csv"), &a.input.join("trace_index.csv")).map_err(config_error)?;
    if !(a.pct >= 0.0) {
        return Err(config_error("pct must be non-negative"));
    }
    let dir = a.output_dir.unwrap_or(a.input);
    std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    for p in report::write_reports(&dir, &traces, a.pct, a.svg).map_err(runtime)? {
        println!("{}", p.display());
    }
    Ok(())
}

/// Parses `args` and runs the chosen subcommand; returns the exit status.
pub fn main<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Score(a) => cmd_score(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
