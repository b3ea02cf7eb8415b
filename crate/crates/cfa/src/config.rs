//! Experiment configuration: a JSON document, field overrides applied on top
//! of it as `dotted.path=value`, then validation before any compute.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cfa_core::acquire::Strategy;
use cfa_core::data::{ihdp_like_columns, ColumnDistribution, ColumnKind};
use cfa_core::estimators::{DrParams, EstimatorFactory, EstimatorSpec};
use cfa_core::runner::{validate_pairs, LoopConfig};
use cfa_core::simulate::SimulationConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Environment variable consulted for the worker count when neither the
/// command line nor the config file sets one.
pub const WORKERS_ENV: &str = "CFA_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("override `{0}` is not of the form path=value")]
    Override(String),
    #[error("override path `{path}`: {reason}")]
    OverridePath { path: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

/// Where raw covariates come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Independent columns drawn once per experiment from `seed`; the
    /// default column set mirrors the IHDP names and kinds.
    Synthetic {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "ihdp_like_columns")]
        columns: Vec<ColumnDistribution>,
    },
    /// A covariate CSV with an `id` column. Every other column needs a kind
    /// here; kinds are never inferred.
    File {
        path: PathBuf,
        columns: BTreeMap<String, ColumnKind>,
    },
}

fn default_n() -> usize {
    747
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            n: default_n(),
            seed: 0,
            columns: ihdp_like_columns(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub simulation: SimulationConfig,
    pub estimators: Vec<EstimatorSpec>,
    pub strategies: Vec<Strategy>,
    #[serde(rename = "loop")]
    pub acquisition: LoopConfig,
    pub n_realizations: usize,
    /// Realization `i` uses seed `base_seed + i`.
    pub base_seed: u64,
    /// Tolerance for samples-to-within-optimal.
    pub pct: f64,
    pub output_dir: PathBuf,
    /// `None` falls back to the environment, then to the machine.
    pub workers: Option<usize>,
    /// Write PCA coordinates of the labeled set for realization 0.
    pub pca: bool,
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::default(),
            simulation: SimulationConfig::default(),
            estimators: vec![EstimatorSpec::Dr(DrParams::default())],
            strategies: vec![Strategy::Random, Strategy::Oe],
            acquisition: LoopConfig::default(),
            n_realizations: 10,
            base_seed: 0,
            pct: 0.01,
            output_dir: PathBuf::from("out"),
            workers: None,
            pca: false,
            svg: false,
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` (or starts from the serialized defaults), applies `overrides` in order
    /// and deserializes the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                serde_json::from_str(&text)?
            }
            None => serde_json::to_value(Self::default()).expect("defaults serialize"),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Ok(serde_json::from_value(doc)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.n_realizations == 0 {
            return bad("n_realizations must be at least 1".into());
        }
        if self.estimators.is_empty() {
            return bad("at least one estimator is required".into());
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required".into());
        }
        if !(self.pct >= 0.0) {
            return bad("pct must be non-negative".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if let DataSource::Synthetic { n, columns, .. } = &self.data {
            if *n < 4 {
                return bad("synthetic data needs at least 4 rows".into());
            }
            if !columns.iter().any(|c| c.name() == self.simulation.confounder_column) {
                return bad(format!(
                    "confounder column `{}` is not among the synthetic columns",
                    self.simulation.confounder_column
                ));
            }
        }
        let mut names: Vec<String> = self.estimators.iter().map(|e| e.name()).collect();
        names.sort();
        names.dedup();
        if names.len() != self.estimators.len() {
            return bad("estimator kinds must be distinct".into());
        }
        let mut strategies = self.strategies.clone();
        strategies.sort();
        strategies.dedup();
        if strategies.len() != self.strategies.len() {
            return bad("strategies must be distinct".into());
        }
        self.simulation
            .validate()
            .and_then(|_| self.acquisition.validate())
            .and_then(|_| {
                let est: Vec<&dyn EstimatorFactory> =
                    self.estimators.iter().map(|e| e as &dyn EstimatorFactory).collect();
                validate_pairs(&self.strategies, &est)
            })
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Worker threads: config, then [`WORKERS_ENV`], then available cores.
    pub fn resolved_workers(&self) -> Result<usize, ConfigError> {
        if let Some(w) = self.workers {
            return Ok(w);
        }
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            return match v.trim().parse::<usize>() {
                Ok(w) if w >= 1 => Ok(w),
                _ => Err(ConfigError::Invalid(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
            };
        }
        Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_realizations as u64)
            .map(|i| self.base_seed.wrapping_add(i))
            .collect()
    }
}

/// Sets `doc[path] = value`. Path segments are object keys or array
/// indices; missing objects are created. The value is parsed as JSON and
/// taken as a string if that fails.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let err = |reason: &str| ConfigError::OverridePath {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    let mut cur = doc;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| err("expected an array index"))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| err(&format!("index {idx} out of range (length {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(err(&format!("`{seg}` is inside a scalar"))),
        };
    }
    Ok(())
}
