//! Acquisition strategies: which pool units should have their confounder
//! revealed next.
//!
//! * `random`: uniform without replacement.
//! * `uncertainty`: `p(A = 1 | x, t)` closest to one half.
//! * `cb` (covariate balancing): smallest expected treated-vs-control MMD
//!   over `(x, A)` once the candidate joins its arm.
//! * `oe` (outcome error): largest `|Σ_a p(a | x, t) ŷ(x, a, t) − y|`.
//!
//! Every strategy returns distinct pool ids, best first. Equal scores are
//! ordered by a key hashed from `(seed, id)`, so permuting the pool never
//! changes the result.

pub mod mmd;

use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{SampleId, Unit};
use crate::error::{Error, Result};
use crate::estimators::{AttributeModel, EffectEstimator};
use crate::rng::{self, Stream};

use self::mmd::{expected_mmd_after_add, KernelSpec, KernelSums};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Uncertainty,
    Cb,
    Oe,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Random, Strategy::Uncertainty, Strategy::Cb, Strategy::Oe];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Uncertainty => "uncertainty",
            Strategy::Cb => "cb",
            Strategy::Oe => "oe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Strategy::ALL.into_iter().find(|st| st.as_str() == s)
    }

    pub fn needs_attribute_model(self) -> bool {
        !matches!(self, Strategy::Random)
    }

    pub fn needs_factual_prediction(self) -> bool {
        matches!(self, Strategy::Oe)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Each candidate scored against the unmodified training set.
    #[default]
    Independent,
    /// After each pick, fold the candidate into its arm as two copies
    /// weighted by `p(A | x, t)` and rescore.
    GreedySequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRequest {
    pub strategy: Strategy,
    pub batch_size: usize,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub scoring_mode: ScoringMode,
}

impl AcquisitionRequest {
    pub fn new(strategy: Strategy, batch_size: usize) -> Self {
        AcquisitionRequest {
            strategy,
            batch_size,
            kernel: KernelSpec::default(),
            scoring_mode: ScoringMode::Independent,
        }
    }

    /// Batch size clamped to the pool; zero requests are rejected.
    fn effective_batch(&self, pool: usize) -> Result<usize> {
        if self.batch_size == 0 {
            return Err(crate::error::invalid("batch size must be at least 1"));
        }
        Ok(self.batch_size.min(pool))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub id: SampleId,
    pub score: f64,
    pub tiebreak: u64,
}

/// Which end of the score range is preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Prefer {
    Largest,
    Smallest,
}

fn rank(cands: &mut [ScoredCandidate], prefer: Prefer) {
    cands.sort_by(|a, b| {
        let primary = match prefer {
            Prefer::Largest => b.score.total_cmp(&a.score),
            Prefer::Smallest => a.score.total_cmp(&b.score),
        };
        match primary {
            Ordering::Equal => a.tiebreak.cmp(&b.tiebreak).then(a.id.cmp(&b.id)),
            o => o,
        }
    });
}

fn scored(pool: &[Unit<'_>], seed: u64, score: impl Fn(&Unit<'_>) -> f64) -> Vec<ScoredCandidate> {
    pool.iter()
        .map(|u| ScoredCandidate {
            id: u.id,
            score: score(u),
            tiebreak: rng::tiebreak_key(seed, u.id.0 as u64),
        })
        .collect()
}

/// Ranks pool units by any per-unit score, with the same seeded tie-break
/// the built-in strategies use. For scores computed outside this crate.
pub fn rank_by(
    pool: &[Unit<'_>],
    seed: u64,
    largest_first: bool,
    score: impl Fn(&Unit<'_>) -> f64,
) -> Vec<ScoredCandidate> {
    let mut c = scored(pool, seed, score);
    rank(&mut c, if largest_first { Prefer::Largest } else { Prefer::Smallest });
    c
}

fn check_unique(pool: &[Unit<'_>]) -> Result<()> {
    let mut ids: Vec<SampleId> = pool.iter().map(|u| u.id).collect();
    ids.sort();
    for w in ids.windows(2) {
        if w[0] == w[1] {
            return Err(crate::error::invalid("pool lists a unit twice"));
        }
    }
    Ok(())
}

/// Uniform sample without replacement, in draw order.
pub fn select_random(pool: &[Unit<'_>], request: &AcquisitionRequest, seed: u64) -> Result<Vec<SampleId>> {
    check_unique(pool)?;
    let k = request.effective_batch(pool.len())?;
    let mut ids: Vec<SampleId> = pool.iter().map(|u| u.id).collect();
    ids.sort();
    let mut rng = rng::stream(seed, Stream::Selection);
    let (chosen, _) = ids.partial_shuffle(&mut rng, k);
    Ok(chosen.to_vec())
}

/// Scores `−|p(A = 1 | x, t) − 0.5|`, largest first.
pub fn uncertainty_scores(pool: &[Unit<'_>], model: &AttributeModel, seed: u64) -> Vec<ScoredCandidate> {
    let mut c = scored(pool, seed, |u| -(model.predict(u.x, u.t) - 0.5).abs());
    rank(&mut c, Prefer::Largest);
    c
}

pub fn select_uncertainty(
    pool: &[Unit<'_>],
    model: &AttributeModel,
    request: &AcquisitionRequest,
    seed: u64,
) -> Result<Vec<SampleId>> {
    check_unique(pool)?;
    let k = request.effective_batch(pool.len())?;
    Ok(uncertainty_scores(pool, model, seed).iter().take(k).map(|c| c.id).collect())
}

/// `|p ŷ(x, 1, t) + (1 − p) ŷ(x, 0, t) − y|` with `p = p(A = 1 | x, t)`.
pub fn outcome_error(p_a1: f64, y_hat_a1: f64, y_hat_a0: f64, y: f64) -> f64 {
    (p_a1 * y_hat_a1 + (1.0 - p_a1) * y_hat_a0 - y).abs()
}

/// Outcome-error scores, largest first.
pub fn oe_scores(
    pool: &[Unit<'_>],
    model: &AttributeModel,
    estimator: &dyn EffectEstimator,
    seed: u64,
) -> Result<Vec<ScoredCandidate>> {
    if !estimator.predicts_factual_outcome() {
        return Err(Error::MissingCapability(estimator.name().into()));
    }
    let mut c = scored(pool, seed, |u| {
        let p = model.predict(u.x, u.t);
        outcome_error(
            p,
            estimator.predict_outcome(u.x, true, u.t),
            estimator.predict_outcome(u.x, false, u.t),
            u.y,
        )
    });
    rank(&mut c, Prefer::Largest);
    Ok(c)
}

pub fn select_oe(
    pool: &[Unit<'_>],
    model: &AttributeModel,
    estimator: &dyn EffectEstimator,
    request: &AcquisitionRequest,
    seed: u64,
) -> Result<Vec<SampleId>> {
    check_unique(pool)?;
    let k = request.effective_batch(pool.len())?;
    Ok(oe_scores(pool, model, estimator, seed)?
        .iter()
        .take(k)
        .map(|c| c.id)
        .collect())
}

/// Kernel sums over the labeled training units, features `(x, a)`, with the
/// bandwidth resolved on those same points.
pub fn train_kernel_sums(train: &[Unit<'_>], kernel: &KernelSpec) -> Result<KernelSums> {
    let feats: Vec<(bool, Vec<f64>)> = train
        .iter()
        .map(|u| {
            u.a.map(|a| (u.t, u.features_with(a))).ok_or_else(|| {
                crate::error::invalid(alloc::format!("training unit {} has no confounder", u.id))
            })
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&[f64]> = feats.iter().map(|(_, f)| f.as_slice()).collect();
    let mut sums = KernelSums::new(kernel.resolve(&refs)?);
    for (t, f) in feats {
        sums.add(t, f, 1.0);
    }
    Ok(sums)
}

/// Expected-MMD scores against the unmodified training set, smallest first.
pub fn cb_scores(
    pool: &[Unit<'_>],
    sums: &KernelSums,
    model: &AttributeModel,
    seed: u64,
) -> Result<Vec<ScoredCandidate>> {
    let mut c = pool
        .iter()
        .map(|u| {
            let p = model.predict(u.x, u.t);
            Ok(ScoredCandidate {
                id: u.id,
                score: expected_mmd_after_add(u.x, u.t, p, sums)?,
                tiebreak: rng::tiebreak_key(seed, u.id.0 as u64),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rank(&mut c, Prefer::Smallest);
    Ok(c)
}

pub fn select_cb(
    pool: &[Unit<'_>],
    train: &[Unit<'_>],
    model: &AttributeModel,
    request: &AcquisitionRequest,
    seed: u64,
) -> Result<Vec<SampleId>> {
    check_unique(pool)?;
    let k = request.effective_batch(pool.len())?;
    let mut sums = train_kernel_sums(train, &request.kernel)?;
    match request.scoring_mode {
        ScoringMode::Independent => Ok(cb_scores(pool, &sums, model, seed)?
            .iter()
            .take(k)
            .map(|c| c.id)
            .collect()),
        ScoringMode::GreedySequential => {
            let mut remaining: Vec<Unit<'_>> = pool.to_vec();
            let mut picked = Vec::with_capacity(k);
            for _ in 0..k {
                let best = cb_scores(&remaining, &sums, model, seed)?[0];
                let pos = remaining.iter().position(|u| u.id == best.id).unwrap();
                let u = remaining.swap_remove(pos);
                let p = model.predict(u.x, u.t);
                for (a, w) in [(true, p), (false, 1.0 - p)] {
                    if w > 0.0 {
                        sums.add(u.t, u.features_with(a), w);
                    }
                }
                picked.push(u.id);
            }
            Ok(picked)
        }
    }
}

/// Models a strategy may consult.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub attribute: Option<&'a AttributeModel>,
    pub estimator: Option<&'a dyn EffectEstimator>,
}

/// Dispatches on `request.strategy`.
pub fn select(
    pool: &[Unit<'_>],
    train: &[Unit<'_>],
    models: Models<'_>,
    request: &AcquisitionRequest,
    seed: u64,
) -> Result<Vec<SampleId>> {
    let need_attr = || {
        models
            .attribute
            .ok_or(crate::error::invalid("strategy needs a fitted attribute model"))
    };
    match request.strategy {
        Strategy::Random => select_random(pool, request, seed),
        Strategy::Uncertainty => select_uncertainty(pool, need_attr()?, request, seed),
        Strategy::Cb => select_cb(pool, train, need_attr()?, request, seed),
        Strategy::Oe => {
            let est = models
                .estimator
                .ok_or(crate::error::invalid("outcome-error strategy needs a fitted estimator"))?;
            select_oe(pool, need_attr()?, est, request, seed)
        }
    }
}
