//! The acquisition loop for one realization: refit, select a batch, reveal
//! it through the oracle, move it from pool to train, record test metrics.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::acquire::{self, mmd::KernelSpec, AcquisitionRequest, Models, ScoringMode, Strategy};
use crate::data::{DataPartition, Unit, World};
use crate::error::{Error, Result};
use crate::estimators::forest::ForestParams;
use crate::estimators::{fit_attribute_model, EffectEstimator, EstimatorFactory};
use crate::evaluate::{self, AcquiredUnit, AcquisitionTrace, MetricsRecord, OptimalReference};
use crate::rng::{self, Stream};
use crate::simulate::{self, Realization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub batch_size: usize,
    /// Acquisition rounds; `None` runs until the pool is empty.
    pub max_iterations: Option<usize>,
    /// Stop once the trailing variance of test `eps_ate` drops to this
    /// value. Reads test ground truth, so only for simulation studies.
    pub sigma_ate_sq: Option<f64>,
    pub variance_window: usize,
    /// Stop once test `eps_ate` is within this fraction of the optimal
    /// reference. Also reads ground truth; everything after the first hit
    /// is irrelevant to samples-to-within studies.
    pub stop_within: Option<f64>,
    pub kernel: KernelSpec,
    pub scoring_mode: ScoringMode,
    pub attribute_model: ForestParams,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            batch_size: 10,
            max_iterations: None,
            sigma_ate_sq: None,
            variance_window: 5,
            stop_within: None,
            kernel: KernelSpec::default(),
            scoring_mode: ScoringMode::Independent,
            attribute_model: ForestParams::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(crate::error::invalid("batch_size must be at least 1"));
        }
        if self.sigma_ate_sq.is_some_and(|s| !(s >= 0.0)) {
            return Err(crate::error::invalid("sigma_ate_sq must be non-negative"));
        }
        if self.stop_within.is_some_and(|p| !(p >= 0.0)) {
            return Err(crate::error::invalid("stop_within must be non-negative"));
        }
        Ok(())
    }
}

/// Rejects strategy / estimator pairs the estimator cannot serve.
pub fn validate_pairs(strategies: &[Strategy], estimators: &[&dyn EstimatorFactory]) -> Result<()> {
    for s in strategies {
        for e in estimators {
            if s.needs_factual_prediction() && !e.predicts_factual_outcome() {
                return Err(Error::MissingCapability(e.name()));
            }
        }
    }
    Ok(())
}

/// Labeled training units (confounder revealed).
pub fn train_units<'w>(world: &'w World, partition: &DataPartition) -> Vec<Unit<'w>> {
    partition
        .train()
        .iter()
        .map(|id| {
            let s = world.sample(*id);
            Unit {
                id: *id,
                x: s.x(),
                a: Some(s.truth.a),
                t: s.t(),
                y: s.y(),
            }
        })
        .collect()
}

/// Pool units (confounder hidden).
pub fn pool_units<'w>(world: &'w World, partition: &DataPartition) -> Vec<Unit<'w>> {
    partition
        .pool()
        .iter()
        .map(|id| {
            let s = world.sample(*id);
            Unit {
                id: *id,
                x: s.x(),
                a: None,
                t: s.t(),
                y: s.y(),
            }
        })
        .collect()
}

/// Seed for every estimator fit within a realization. It is the same for
/// each round so the final round (everything acquired) reproduces the
/// optimal reference exactly.
pub fn estimator_seed(seed: u64) -> u64 {
    rng::mix(seed ^ rng::mix(Stream::Estimator as u64))
}

fn attribute_seed(seed: u64) -> u64 {
    rng::mix(seed ^ rng::mix(Stream::AttributeModel as u64))
}

fn selection_seed(seed: u64, iteration: usize) -> u64 {
    rng::mix(rng::mix(seed ^ rng::mix(Stream::Selection as u64)) ^ iteration as u64)
}

/// Fit on train ∪ pool with every confounder revealed; test metrics.
pub fn optimal_reference(
    realization: &Realization,
    estimator: &dyn EstimatorFactory,
    seed: u64,
) -> Result<OptimalReference> {
    let mut full = realization.partition.clone();
    let pool: Vec<_> = full.pool().iter().copied().collect();
    full.acquire(&pool)?;
    let units = train_units(&realization.world, &full);
    let model = estimator.fit(&units, estimator_seed(seed))?;
    let m = evaluate::evaluate_on_test(model.as_ref(), &realization.world, &full)?;
    Ok(OptimalReference {
        eps_ate: m.eps_ate,
        sqrt_pehe: libm::sqrt(m.pehe),
    })
}

fn record(
    model: &dyn EffectEstimator,
    realization: &Realization,
    partition: &DataPartition,
    iteration: usize,
    acquired: &[AcquiredUnit],
) -> Result<MetricsRecord> {
    let m = evaluate::evaluate_on_test(model, &realization.world, partition)?;
    let n_treated = acquired.iter().filter(|a| a.treated).count();
    Ok(MetricsRecord {
        iteration,
        n_acquired: acquired.len(),
        eps_ate: m.eps_ate,
        pehe: m.pehe,
        sqrt_pehe: libm::sqrt(m.pehe),
        n_treated_acquired: n_treated,
        n_control_acquired: acquired.len() - n_treated,
    })
}

/// Runs one strategy with one estimator from the realization's initial
/// partition. Failures end the trace early and are recorded on it.
pub fn run_trace(
    realization: &Realization,
    realization_index: usize,
    seed: u64,
    strategy: Strategy,
    estimator: &dyn EstimatorFactory,
    cfg: &LoopConfig,
    optimal: Option<OptimalReference>,
) -> AcquisitionTrace {
    let mut trace = AcquisitionTrace {
        realization: realization_index,
        seed,
        strategy: strategy.as_str().to_string(),
        estimator: estimator.name(),
        records: Vec::new(),
        acquired: Vec::new(),
        optimal,
        failure: None,
    };
    if let Err(e) = drive(realization, seed, strategy, estimator, cfg, &mut trace) {
        log::warn!(
            "realization {realization_index} ({}, {}) stopped: {e}",
            trace.strategy,
            trace.estimator
        );
        trace.failure = Some(format!("{e}"));
    }
    trace
}

fn drive(
    realization: &Realization,
    seed: u64,
    strategy: Strategy,
    estimator: &dyn EstimatorFactory,
    cfg: &LoopConfig,
    trace: &mut AcquisitionTrace,
) -> Result<()> {
    cfg.validate()?;
    validate_pairs(&[strategy], &[estimator])?;
    let world = &realization.world;
    let mut partition = realization.partition.clone();
    let request = AcquisitionRequest {
        strategy,
        batch_size: cfg.batch_size,
        kernel: cfg.kernel,
        scoring_mode: cfg.scoring_mode,
    };

    let mut model = estimator.fit(&train_units(world, &partition), estimator_seed(seed))?;
    trace.records.push(record(model.as_ref(), realization, &partition, 0, &trace.acquired)?);

    let mut iteration = 0;
    loop {
        if partition.pool().is_empty() || cfg.max_iterations.is_some_and(|m| iteration >= m) {
            break;
        }
        if let Some(limit) = cfg.sigma_ate_sq {
            if evaluate::trailing_eps_ate_variance(&trace.records, cfg.variance_window)
                .is_some_and(|v| v <= limit)
            {
                break;
            }
        }
        if let (Some(pct), Some(opt), Some(last)) = (cfg.stop_within, trace.optimal, trace.records.last()) {
            if last.eps_ate <= evaluate::within_threshold(opt.eps_ate, pct) {
                break;
            }
        }
        let train = train_units(world, &partition);
        let pool = pool_units(world, &partition);
        let attribute = if strategy.needs_attribute_model() {
            Some(fit_attribute_model(&train, &cfg.attribute_model, attribute_seed(seed))?)
        } else {
            None
        };
        let models = Models {
            attribute: attribute.as_ref(),
            estimator: Some(model.as_ref()),
        };
        let batch = acquire::select(&pool, &train, models, &request, selection_seed(seed, iteration))?;
        iteration += 1;
        for (id, _) in simulate::oracle_reveal(world, &mut partition, &batch)? {
            trace.acquired.push(AcquiredUnit {
                id,
                iteration,
                treated: world.sample(id).t(),
            });
        }
        model = estimator.fit(&train_units(world, &partition), estimator_seed(seed))?;
        trace
            .records
            .push(record(model.as_ref(), realization, &partition, iteration, &trace.acquired)?);
    }
    Ok(())
}

/// All `(strategy, estimator)` traces of one realization, sharing its world
/// and initial partition. The optimal reference is computed once per
/// estimator.
pub fn run_realization(
    realization: &Realization,
    realization_index: usize,
    seed: u64,
    strategies: &[Strategy],
    estimators: &[&dyn EstimatorFactory],
    cfg: &LoopConfig,
) -> Result<Vec<AcquisitionTrace>> {
    cfg.validate()?;
    validate_pairs(strategies, estimators)?;
    let mut out = Vec::with_capacity(strategies.len() * estimators.len());
    for est in estimators {
        let optimal = match optimal_reference(realization, *est, seed) {
            Ok(o) => Some(o),
            Err(e) => {
                log::warn!("realization {realization_index}: optimal fit for {} failed: {e}", est.name());
                None
            }
        };
        for s in strategies {
            out.push(run_trace(realization, realization_index, seed, *s, *est, cfg, optimal));
        }
    }
    Ok(out)
}
