//! End-to-end runs: load covariates, simulate each realization, run every
//! strategy / estimator pair through the acquisition loop, write outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cfa_core::data::{synthesize_covariates, CovariateTable, DataPartition, SampleId};
use cfa_core::estimators::EstimatorFactory;
use cfa_core::evaluate::{pca_export, AcquisitionTrace};
use cfa_core::runner::{run_realization, train_units};
use cfa_core::simulate::{simulate, Realization};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, DataSource, ExperimentConfig};
use crate::io::{self, CsvBuffer, IoError};
use crate::report::{self, ReportError};
use crate::svg;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("input data: {0}")]
    Data(IoError),
    #[error("realization {index} (seed {seed}): {source}")]
    Realization {
        index: usize,
        seed: u64,
        source: cfa_core::Error,
    },
    #[error("output: {0}")]
    Output(#[from] IoError),
    #[error("cannot create output directory {path}: {source}")]
    OutputDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl RunError {
    /// Process exit status: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) | RunError::Data(_) => 2,
            _ => 3,
        }
    }
}

/// Everything needed to rerun an experiment and check its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub workers: usize,
    /// Wall-clock milliseconds per phase; per-realization phases are summed
    /// over realizations.
    pub timings_ms: BTreeMap<String, f64>,
    pub failures: Vec<String>,
    pub outputs: Vec<PathBuf>,
}

/// Raw covariates named by the config.
pub fn load_data(cfg: &ExperimentConfig) -> Result<CovariateTable, RunError> {
    match &cfg.data {
        DataSource::Synthetic { n, seed, columns } => synthesize_covariates(*n, columns, *seed)
            .map_err(|e| RunError::Config(ConfigError::Invalid(format!("synthetic data: {e}")))),
        DataSource::File { path, columns } => io::load_covariates(path, columns).map_err(RunError::Data),
    }
}

fn create_dir(path: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(path).map_err(|source| RunError::OutputDir {
        path: path.to_path_buf(),
        source,
    })
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, RunError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))
}

struct RealizationResult {
    index: usize,
    realization: Realization,
    traces: Vec<AcquisitionTrace>,
    simulate_ms: f64,
    acquire_ms: f64,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Simulates and runs every realization, in parallel across realizations.
/// Results come back in realization order whatever the thread count.
pub fn run_traces(cfg: &ExperimentConfig, raw: &CovariateTable, workers: usize) -> Result<Vec<(Realization, Vec<AcquisitionTrace>)>, RunError> {
    Ok(run_all(cfg, raw, workers)?
        .into_iter()
        .map(|r| (r.realization, r.traces))
        .collect())
}

fn run_all(cfg: &ExperimentConfig, raw: &CovariateTable, workers: usize) -> Result<Vec<RealizationResult>, RunError> {
    let estimators: Vec<&dyn EstimatorFactory> = cfg.estimators.iter().map(|e| e as &dyn EstimatorFactory).collect();
    let seeds = cfg.seeds();
    let pool = worker_pool(workers)?;
    let results: Vec<Result<RealizationResult, RunError>> = pool.install(|| {
        seeds
            .par_iter()
            .enumerate()
            .map(|(index, &seed)| {
                let wrap = |source| RunError::Realization { index, seed, source };
                let t0 = Instant::now();
                let realization = simulate(raw, &cfg.simulation, seed).map_err(wrap)?;
                let simulate_ms = ms(t0);
                let t1 = Instant::now();
                let traces = run_realization(
                    &realization,
                    index,
                    seed,
                    &cfg.strategies,
                    &estimators,
                    &cfg.acquisition,
                )
                .map_err(wrap)?;
                log::info!("realization {index} (seed {seed}) done");
                Ok(RealizationResult {
                    index,
                    realization,
                    traces,
                    simulate_ms,
                    acquire_ms: ms(t1),
                })
            })
            .collect()
    });
    let mut out = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    out.sort_by_key(|r| r.index);
    Ok(out)
}

/// Labeled set after each iteration of `trace`, projected on its own top two
/// principal components.
pub fn pca_by_iteration(
    realization: &Realization,
    trace: &AcquisitionTrace,
) -> Result<Vec<(usize, Vec<cfa_core::evaluate::PcaPoint>)>, cfa_core::Error> {
    let initial = &realization.partition;
    let last = trace.records.last().map_or(0, |r| r.iteration);
    let mut train: BTreeSet<SampleId> = initial.train().clone();
    let mut out = Vec::with_capacity(last + 1);
    for k in 0..=last {
        train.extend(trace.acquired.iter().filter(|a| a.iteration == k).map(|a| a.id));
        let part = DataPartition::from_sets(train.clone(), BTreeSet::new(), initial.test().clone())?;
        out.push((k, pca_export(&train_units(&realization.world, &part))?));
    }
    Ok(out)
}

fn write_pca(dir: &Path, realization: &Realization, traces: &[AcquisitionTrace], svg_too: bool) -> Result<Vec<PathBuf>, RunError> {
    let mut written = Vec::new();
    for t in traces.iter().filter(|t| t.failure.is_none()) {
        let by_iter = match pca_by_iteration(realization, t) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("pca for {} / {} skipped: {e}", t.strategy, t.estimator);
                continue;
            }
        };
        let labeled: Vec<(usize, Vec<(String, _)>)> = by_iter
            .iter()
            .map(|(k, pts)| {
                (
                    *k,
                    pts.iter()
                        .map(|p| (realization.world.label(p.id).to_string(), *p))
                        .collect(),
                )
            })
            .collect();
        let stem = format!("pca_{}_{}", t.strategy, t.estimator);
        let path = dir.join(format!("{stem}.csv"));
        io::pca_csv(&labeled).save(&path)?;
        written.push(path);
        if svg_too {
            if let Some((k, pts)) = by_iter.last() {
                let acquired: BTreeSet<SampleId> = t.acquired.iter().map(|a| a.id).collect();
                let doc = svg::pca_scatter(
                    pts,
                    &|p| acquired.contains(&p.id),
                    &format!("{} / {}: labeled set after iteration {k}", t.strategy, t.estimator),
                );
                let path = dir.join(format!("{stem}.svg"));
                io::atomic_write(&path, doc.as_bytes())?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Runs the configured experiment and writes every output under
/// `cfg.output_dir`. Configuration is validated before any compute.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest, RunError> {
    cfg.validate()?;
    let workers = cfg.resolved_workers()?;
    let mut timings = BTreeMap::new();

    let t = Instant::now();
    let raw = load_data(cfg)?;
    raw.column_index(&cfg.simulation.confounder_column)
        .map_err(|e| RunError::Config(ConfigError::Invalid(e.to_string())))?;
    timings.insert("load_data".to_string(), ms(t));

    let dir = &cfg.output_dir;
    create_dir(dir)?;

    let t = Instant::now();
    let results = run_all(cfg, &raw, workers)?;
    timings.insert("realizations_wall".to_string(), ms(t));
    timings.insert("simulate".to_string(), results.iter().map(|r| r.simulate_ms).sum());
    timings.insert("acquire".to_string(), results.iter().map(|r| r.acquire_ms).sum());

    let traces: Vec<AcquisitionTrace> = results.iter().flat_map(|r| r.traces.iter().cloned()).collect();
    let failures: Vec<String> = traces
        .iter()
        .filter_map(|t| {
            t.failure
                .as_ref()
                .map(|f| format!("realization {} {} / {}: {f}", t.realization, t.strategy, t.estimator))
        })
        .collect();

    let t = Instant::now();
    let mut outputs = Vec::new();
    let mut save = |name: &str, buf: CsvBuffer| -> Result<(), RunError> {
        let p = dir.join(name);
        buf.save(&p)?;
        outputs.push(p);
        Ok(())
    };
    save("traces.csv", io::traces_csv(&traces))?;
    save("trace_index.csv", io::trace_index_csv(&traces))?;
    save(
        "acquired.csv",
        io::acquired_csv(&traces, |_, id| raw.ids()[id.index()].clone()),
    )?;
    timings.insert("write_traces".to_string(), ms(t));

    let t = Instant::now();
    if traces.iter().filter(|t| t.failure.is_none()).count() >= 2 {
        match report::write_reports(dir, &traces, cfg.pct, cfg.svg) {
            Ok(paths) => outputs.extend(paths),
            Err(ReportError::Summary(e)) => log::warn!("summary tables skipped: {e}"),
            Err(e) => return Err(e.into()),
        }
    } else {
        log::warn!("summary tables skipped: fewer than two successful traces");
    }
    if cfg.pca {
        if let Some(first) = results.first() {
            outputs.extend(write_pca(dir, &first.realization, &first.traces, cfg.svg)?);
        }
    }
    timings.insert("reports".to_string(), ms(t));

    let manifest = RunManifest {
        version: VERSION.to_string(),
        config: cfg.clone(),
        seeds: cfg.seeds(),
        workers,
        timings_ms: timings,
        failures,
        outputs,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    io::atomic_write(&dir.join("manifest.json"), &json)?;
    Ok(manifest)
}

/// Writes one simulated realization (`world.csv`, `truth.csv`,
/// `partition.csv`, `generating.json`) for `seed`.
pub fn simulate_one(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    cfg.simulation
        .validate()
        .map_err(|e| RunError::Config(ConfigError::Invalid(e.to_string())))?;
    let raw = load_data(cfg)?;
    let realization = simulate(&raw, &cfg.simulation, seed).map_err(|source| RunError::Realization {
        index: 0,
        seed,
        source,
    })?;
    create_dir(dir)?;
    let w = &realization.world;
    let p = &realization.partition;
    let mut written = Vec::new();
    for (name, buf) in [
        ("world.csv", io::world_csv(w, p)),
        ("truth.csv", io::truth_csv(w)),
        ("partition.csv", io::partition_csv(w, p)),
    ] {
        let path = dir.join(name);
        buf.save(&path)?;
        written.push(path);
    }
    #[derive(Serialize)]
    struct Generating<'a> {
        version: &'a str,
        seed: u64,
        simulation: &'a cfa_core::simulate::SimulationConfig,
        treatment: &'a cfa_core::simulate::TreatmentParams,
        surface: &'a cfa_core::simulate::OutcomeSurface,
    }
    let doc = Generating {
        version: VERSION,
        seed,
        simulation: &cfg.simulation,
        treatment: &realization.treatment,
        surface: &realization.surface,
    };
    let path = dir.join("generating.json");
    io::atomic_write(&path, &serde_json::to_vec_pretty(&doc).expect("serializes"))?;
    written.push(path);
    Ok(written)
}
