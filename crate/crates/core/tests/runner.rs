use cfa_core::acquire::Strategy;
use cfa_core::data::{self, synthesize_covariates, Unit};
use cfa_core::estimators::{DrParams, EffectEstimator, EstimatorFactory, EstimatorSpec, HeadKind};
use cfa_core::runner::*;
use cfa_core::simulate::{simulate, Realization, SimulationConfig};
use cfa_core::{Error, Result};

fn toy(n: usize, seed: u64) -> Realization {
    let table = synthesize_covariates(n, &data::ihdp_like_columns(), seed).unwrap();
    let cfg = SimulationConfig {
        mask_fraction: 0.5,
        ..SimulationConfig::default()
    };
    simulate(&table, &cfg, seed).unwrap()
}

/// Per-arm means with a constant propensity: fast and deterministic.
fn cheap() -> EstimatorSpec {
    EstimatorSpec::Dr(DrParams {
        outcome_head: HeadKind::Constant,
        propensity_head: HeadKind::Constant,
        ..DrParams::default()
    })
}

fn cfg(batch_size: usize) -> LoopConfig {
    LoopConfig {
        batch_size,
        ..LoopConfig::default()
    }
}

/// Fails once training grows past `limit` units.
struct Flaky {
    limit: usize,
}

impl EstimatorFactory for Flaky {
    fn name(&self) -> String {
        "flaky".into()
    }

    fn predicts_factual_outcome(&self) -> bool {
        true
    }

    fn fit(&self, train: &[Unit<'_>], seed: u64) -> Result<Box<dyn EffectEstimator>> {
        if train.len() > self.limit {
            return Err(Error::EmptySet("flaky"));
        }
        cheap().fit(train, seed)
    }
}

/// An effect-only model, unusable for outcome-error acquisition.
struct EffectOnly;

impl EstimatorFactory for EffectOnly {
    fn name(&self) -> String {
        "effect_only".into()
    }

    fn predicts_factual_outcome(&self) -> bool {
        false
    }

    fn fit(&self, train: &[Unit<'_>], seed: u64) -> Result<Box<dyn EffectEstimator>> {
        cheap().fit(train, seed)
    }
}

#[test]
fn toy_trace_length() {
    let r = toy(20, 1);
    let pool = r.partition.pool().len();
    // Test round(0.25 * 20) = 5, train round(0.5 * 0.75 * 20) = 8.
    assert_eq!(pool, 7);
    for beta in [1, 3, 5, 8] {
        let t = run_trace(&r, 0, 1, Strategy::Random, &cheap(), &cfg(beta), None);
        assert!(t.failure.is_none());
        assert_eq!(t.records.len(), pool.div_ceil(beta) + 1, "beta {beta}");
        assert_eq!(t.records.last().unwrap().n_acquired, pool);
        assert!(t.records.windows(2).all(|w| {
            let step = w[1].n_acquired - w[0].n_acquired;
            step >= 1 && step <= beta
        }));
    }
}

#[test]
fn batch_covering_the_pool_runs_once() {
    let r = toy(40, 2);
    let t = run_trace(&r, 0, 2, Strategy::Cb, &cheap(), &cfg(1000), None);
    assert_eq!(t.records.len(), 2);
    assert_eq!(t.acquired.len(), r.partition.pool().len());
}

#[test]
fn zero_iterations_keeps_the_initial_record() {
    let r = toy(40, 3);
    let c = LoopConfig {
        max_iterations: Some(0),
        ..cfg(4)
    };
    let t = run_trace(&r, 0, 3, Strategy::Oe, &cheap(), &c, None);
    assert_eq!(t.records.len(), 1);
    assert_eq!(t.records[0].n_acquired, 0);
    assert!(t.acquired.is_empty());
}

#[test]
fn final_record_matches_the_optimal_reference() {
    let r = toy(60, 4);
    let opt = optimal_reference(&r, &cheap(), 4).unwrap();
    let t = run_trace(&r, 0, 4, Strategy::Uncertainty, &cheap(), &cfg(7), Some(opt));
    let last = t.records.last().unwrap();
    assert_eq!(last.eps_ate, opt.eps_ate);
    assert_eq!(last.sqrt_pehe, opt.sqrt_pehe);
}

#[test]
fn early_stops() {
    let r = toy(60, 5);
    let opt = optimal_reference(&r, &cheap(), 5).unwrap();
    let loose = LoopConfig {
        stop_within: Some(1e9),
        ..cfg(2)
    };
    let t = run_trace(&r, 0, 5, Strategy::Random, &cheap(), &loose, Some(opt));
    assert_eq!(t.records.len(), 1);

    let variance = LoopConfig {
        sigma_ate_sq: Some(1e9),
        variance_window: 3,
        ..cfg(1)
    };
    let t = run_trace(&r, 0, 5, Strategy::Random, &cheap(), &variance, None);
    assert_eq!(t.records.len(), 3);
}

#[test]
fn failures_are_marked_and_others_continue() {
    let r = toy(60, 6);
    let limit = r.partition.train().len() + 5;
    let flaky = Flaky { limit };
    let spec = cheap();
    let estimators: [&dyn EstimatorFactory; 2] = [&flaky, &spec];
    let traces = run_realization(&r, 0, 6, &[Strategy::Random, Strategy::Oe], &estimators, &cfg(3)).unwrap();
    assert_eq!(traces.len(), 4);
    for t in &traces {
        if t.estimator == "flaky" {
            assert!(t.failure.is_some());
            assert!(t.optimal.is_none());
            assert!(t.records.last().unwrap().n_acquired <= 5);
        } else {
            assert!(t.failure.is_none());
            assert_eq!(t.records.last().unwrap().n_acquired, r.partition.pool().len());
        }
    }
}

#[test]
fn capability_gate() {
    let r = toy(30, 7);
    let e: [&dyn EstimatorFactory; 1] = [&EffectOnly];
    assert!(validate_pairs(&[Strategy::Random, Strategy::Cb], &e).is_ok());
    assert!(matches!(validate_pairs(&[Strategy::Oe], &e), Err(Error::MissingCapability(_))));
    assert!(run_realization(&r, 0, 7, &[Strategy::Oe], &e, &cfg(2)).is_err());
    assert!(run_realization(&r, 0, 7, &[Strategy::Random], &e, &cfg(0)).is_err());
}

#[test]
fn strategies_share_the_starting_point() {
    let r = toy(80, 8);
    let spec = cheap();
    let traces = run_realization(&r, 3, 8, &Strategy::ALL, &[&spec], &cfg(5)).unwrap();
    for t in &traces {
        assert_eq!(t.records[0], traces[0].records[0]);
        assert_eq!(t.optimal, traces[0].optimal);
        assert_eq!(t.realization, 3);
    }
    assert_eq!(traces, run_realization(&r, 3, 8, &Strategy::ALL, &[&spec], &cfg(5)).unwrap());
}

#[test]
fn acquired_units_come_from_the_pool_once() {
    let r = toy(80, 9);
    let t = run_trace(&r, 0, 9, Strategy::Cb, &cheap(), &cfg(6), None);
    let mut ids: Vec<_> = t.acquired.iter().map(|a| a.id).collect();
    ids.sort();
    let pool: Vec<_> = r.partition.pool().iter().copied().collect();
    assert_eq!(ids, pool);
    let counts = cfa_core::evaluate::arm_counts(&t);
    for (rec, (tr, co)) in t.records.iter().zip(counts) {
        assert_eq!((rec.n_treated_acquired, rec.n_control_acquired), (tr, co));
        assert!(rec.pehe >= rec.eps_ate * rec.eps_ate - 1e-12);
    }
}
