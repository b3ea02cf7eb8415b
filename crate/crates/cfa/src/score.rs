//! One-shot batch selection on a partially labeled dataset: rows with a
//! confounder value train the models, rows without one form the pool.

use std::collections::BTreeMap;

use cfa_core::acquire::{self, mmd::expected_mmd_after_add, AcquisitionRequest, ScoredCandidate, ScoringMode, Strategy};
use cfa_core::data::{SampleId, Unit};
use cfa_core::estimators::forest::ForestParams;
use cfa_core::estimators::{fit_attribute_model, EstimatorFactory, EstimatorSpec};

use crate::io::PartialDataset;

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub request: AcquisitionRequest,
    pub seed: u64,
    pub estimator: EstimatorSpec,
    pub forest: ForestParams,
    /// Model outputs keyed by id: `(p(A = 1 | x, t), ŷ(x, 1, t), ŷ(x, 0, t))`.
    /// When present, no model is fitted.
    pub predictions: Option<BTreeMap<String, (f64, f64, f64)>>,
}

/// A selected unit; `score` is `None` where the strategy has no per-unit
/// score (random, greedy covariate balancing).
#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    pub id: String,
    pub score: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("no unlabeled rows to select from")]
    EmptyPool,
    #[error("no prediction for id `{0}`")]
    MissingPrediction(String),
    #[error(transparent)]
    Core(#[from] cfa_core::Error),
}

pub fn score(data: &PartialDataset, opts: &ScoreOptions) -> Result<Vec<Selected>, ScoreError> {
    let dim = data.feature_names.len();
    let units: Vec<Unit<'_>> = (0..data.ids.len())
        .map(|i| Unit {
            id: SampleId(i as u32),
            x: &data.x[i * dim..(i + 1) * dim],
            a: data.a[i],
            t: data.t[i],
            y: data.y[i],
        })
        .collect();
    let (train, pool): (Vec<Unit<'_>>, Vec<Unit<'_>>) = units.iter().partition(|u| u.a.is_some());
    if pool.is_empty() {
        return Err(ScoreError::EmptyPool);
    }
    let k = opts.request.batch_size.min(pool.len());
    let label = |id: SampleId| data.ids[id.index()].clone();
    let keep = |c: Vec<ScoredCandidate>| -> Vec<Selected> {
        c.into_iter()
            .take(k)
            .map(|c| Selected {
                id: label(c.id),
                score: Some(c.score),
            })
            .collect()
    };

    if opts.request.strategy == Strategy::Random {
        return Ok(acquire::select_random(&pool, &opts.request, opts.seed)?
            .into_iter()
            .map(|id| Selected { id: label(id), score: None })
            .collect());
    }

    if let Some(pred) = &opts.predictions {
        let lookup = |u: &Unit<'_>| -> Result<(f64, f64, f64), ScoreError> {
            let id = label(u.id);
            pred.get(&id).copied().ok_or(ScoreError::MissingPrediction(id))
        };
        let mut by_unit = BTreeMap::new();
        for u in &pool {
            by_unit.insert(u.id, lookup(u)?);
        }
        let get = |u: &Unit<'_>| by_unit[&u.id];
        let ranked = match opts.request.strategy {
            Strategy::Random => unreachable!("handled above"),
            Strategy::Uncertainty => acquire::rank_by(&pool, opts.seed, true, |u| -(get(u).0 - 0.5).abs()),
            Strategy::Oe => acquire::rank_by(&pool, opts.seed, true, |u| {
                let (p, y1, y0) = get(u);
                acquire::outcome_error(p, y1, y0, u.y)
            }),
            Strategy::Cb => {
                let sums = acquire::train_kernel_sums(&train, &opts.request.kernel)?;
                let mut mmd = BTreeMap::new();
                for u in &pool {
                    mmd.insert(u.id, expected_mmd_after_add(u.x, u.t, get(u).0, &sums)?);
                }
                acquire::rank_by(&pool, opts.seed, false, |u| mmd[&u.id])
            }
        };
        return Ok(keep(ranked));
    }

    if train.is_empty() {
        return Err(cfa_core::Error::EmptySet("labeled rows").into());
    }
    let attribute = fit_attribute_model(&train, &opts.forest, opts.seed)?;
    let ranked = match opts.request.strategy {
        Strategy::Random => unreachable!("handled above"),
        Strategy::Uncertainty => acquire::uncertainty_scores(&pool, &attribute, opts.seed),
        Strategy::Oe => {
            let model = opts.estimator.fit(&train, opts.seed)?;
            acquire::oe_scores(&pool, &attribute, model.as_ref(), opts.seed)?
        }
        Strategy::Cb if opts.request.scoring_mode == ScoringMode::GreedySequential => {
            return Ok(acquire::select_cb(&pool, &train, &attribute, &opts.request, opts.seed)?
                .into_iter()
                .map(|id| Selected { id: label(id), score: None })
                .collect());
        }
        Strategy::Cb => {
            let sums = acquire::train_kernel_sums(&train, &opts.request.kernel)?;
            acquire::cb_scores(&pool, &sums, &attribute, opts.seed)?
        }
    };
    Ok(keep(ranked))
}
