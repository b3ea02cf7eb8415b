//! The attribute model `p(A | x, t)` and the outcome / effect estimators,
//! all behind one contract so acquisition strategies stay model-agnostic.

pub mod forest;
pub mod gp;
pub mod nn;

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use once_cell::race::OnceBox;
use serde::{Deserialize, Serialize};

use crate::data::Unit;
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

use self::forest::{ForestParams, RandomForest};
use self::gp::{GaussianProcess, GpParams};
use self::nn::{Activation, EarlyStopping, Network, Output, TrainConfig};

/// A fitted outcome model. Implementations are immutable after fitting.
pub trait EffectEstimator: Send + Sync {
    fn name(&self) -> &str;

    /// `(ŷ0, ŷ1)` at covariates `x` and confounder value `a`.
    fn potential_outcomes(&self, x: &[f64], a: bool) -> (f64, f64);

    fn effect(&self, x: &[f64], a: bool) -> f64 {
        let (y0, y1) = self.potential_outcomes(x, a);
        y1 - y0
    }

    /// Whether `predict_outcome` is meaningful; effect-only models (a
    /// causal forest, say) return false and cannot drive outcome-error
    /// acquisition.
    fn predicts_factual_outcome(&self) -> bool {
        true
    }

    /// `ŷ(x, a, t)`.
    fn predict_outcome(&self, x: &[f64], a: bool, t: bool) -> f64 {
        let (y0, y1) = self.potential_outcomes(x, a);
        if t {
            y1
        } else {
            y0
        }
    }

    /// ATE with a residual correction over units carrying factual outcomes,
    /// for estimators that have one.
    fn corrected_ate(&self, _units: &[Unit<'_>]) -> Option<f64> {
        None
    }
}

/// Something that can produce a fitted [`EffectEstimator`].
pub trait EstimatorFactory: Send + Sync {
    fn name(&self) -> String;
    fn predicts_factual_outcome(&self) -> bool;
    fn fit(&self, train: &[Unit<'_>], seed: u64) -> Result<Box<dyn EffectEstimator>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Network,
    /// Intercept only: the per-arm mean, or the marginal treatment rate.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrParams {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub propensity_clip: f64,
    pub outcome_head: HeadKind,
    pub propensity_head: HeadKind,
}

impl Default for DrParams {
    fn default() -> Self {
        DrParams {
            hidden: 32,
            epochs: 500,
            learning_rate: 0.01,
            l2: 1e-4,
            propensity_clip: 0.01,
            outcome_head: HeadKind::Network,
            propensity_head: HeadKind::Network,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: alloc::vec![64, 32],
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 200,
            l2: 1e-4,
            validation_fraction: 0.1,
            patience: 10,
        }
    }
}

/// Estimator configuration: `{"kind": "dr", ...overrides}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Dr(DrParams),
    GpMulti(GpParams),
    MlpMulti(MlpParams),
}

impl EstimatorSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EstimatorSpec::Dr(_) => "dr",
            EstimatorSpec::GpMulti(_) => "gp_multi",
            EstimatorSpec::MlpMulti(_) => "mlp_multi",
        }
    }
}

impl EstimatorFactory for EstimatorSpec {
    fn name(&self) -> String {
        String::from(self.kind_name())
    }

    fn predicts_factual_outcome(&self) -> bool {
        true
    }

    fn fit(&self, train: &[Unit<'_>], seed: u64) -> Result<Box<dyn EffectEstimator>> {
        fit_estimator(self, train, seed)
    }
}

/// Row-major `(x, a)` features, treatments and outcomes of labeled units,
/// optionally restricted to one arm.
struct Design {
    x: Vec<f64>,
    dim: usize,
    t: Vec<bool>,
    y: Vec<f64>,
}

fn design(units: &[Unit<'_>], arm: Option<bool>) -> Result<Design> {
    let dim = units.first().map_or(0, |u| u.x.len() + 1);
    let mut d = Design {
        x: Vec::with_capacity(units.len() * dim),
        dim,
        t: Vec::new(),
        y: Vec::new(),
    };
    for u in units {
        let a = u
            .a
            .ok_or_else(|| invalid(format!("training unit {} has no observed confounder", u.id)))?;
        if u.x.len() + 1 != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: u.x.len() + 1,
            });
        }
        if arm.is_some_and(|t| t != u.t) {
            continue;
        }
        d.x.extend_from_slice(u.x);
        d.x.push(if a { 1.0 } else { 0.0 });
        d.t.push(u.t);
        d.y.push(u.y);
    }
    Ok(d)
}

fn features(x: &[f64], a: bool) -> Vec<f64> {
    let mut f = Vec::with_capacity(x.len() + 1);
    f.extend_from_slice(x);
    f.push(if a { 1.0 } else { 0.0 });
    f
}

fn arm_name(t: bool) -> &'static str {
    if t {
        "treated"
    } else {
        "control"
    }
}

/// Regression head on standardized targets.
#[derive(Debug, Clone, PartialEq)]
enum Head {
    Constant(f64),
    Network { net: Network, mean: f64, sd: f64 },
    Gp(GaussianProcess),
}

impl Head {
    fn predict(&self, f: &[f64]) -> f64 {
        match self {
            Head::Constant(c) => *c,
            Head::Network { net, mean, sd } => mean + sd * net.predict(f),
            Head::Gp(gp) => gp.predict(f),
        }
    }
}

fn fit_network_head(d: &Design, cfg: &TrainConfig, rng: &mut Rng) -> Result<Head> {
    let (mean, sd) = crate::data::mean_sd(&d.y);
    if d.y.len() < 2 || !(sd > 1e-12) {
        return Ok(Head::Constant(mean));
    }
    let z: Vec<f64> = d.y.iter().map(|v| (v - mean) / sd).collect();
    let net = nn::train(&d.x, d.dim, &z, Output::Linear, cfg, rng)?;
    Ok(Head::Network { net, mean, sd })
}

/// Each arm's head draws from its own stream, so nothing about one arm's
/// data (not even how long its training ran) reaches the other head.
fn arm_stream(seed: u64, arm: bool) -> Rng {
    crate::rng::indexed_stream(seed, crate::rng::Stream::Estimator, 2 + arm as u64)
}

/// Two regression heads, one per arm; each sees only its own arm's units.
#[derive(Debug, Clone)]
pub struct MultiHead {
    name: &'static str,
    control: Head,
    treated: Head,
}

impl EffectEstimator for MultiHead {
    fn name(&self) -> &str {
        self.name
    }

    fn potential_outcomes(&self, x: &[f64], a: bool) -> (f64, f64) {
        let f = features(x, a);
        (self.control.predict(&f), self.treated.predict(&f))
    }
}

/// Outcome heads per arm plus a propensity model `ê(x, a)`.
///
/// The propensity network is fitted on first use: acquisition and plug-in
/// effects never need it. Its random stream is separate from the outcome
/// heads', so fitting it later gives the same network.
#[derive(Debug)]
pub struct DoublyRobust {
    heads: MultiHead,
    propensity: OnceBox<Propensity>,
    pending: Option<PendingPropensity>,
    clip: f64,
}

#[derive(Debug, Clone)]
enum Propensity {
    Constant(f64),
    Network(Network),
}

#[derive(Debug, Clone)]
struct PendingPropensity {
    x: Vec<f64>,
    dim: usize,
    targets: Vec<f64>,
    cfg: TrainConfig,
    seed: u64,
}

impl PendingPropensity {
    fn fit(&self) -> Propensity {
        let mut rng = crate::rng::indexed_stream(self.seed, crate::rng::Stream::Estimator, 1);
        match nn::train(&self.x, self.dim, &self.targets, Output::Sigmoid, &self.cfg, &mut rng) {
            Ok(net) => Propensity::Network(net),
            Err(e) => {
                let rate = self.targets.iter().sum::<f64>() / self.targets.len() as f64;
                log::warn!("propensity network failed ({e}); using the treatment rate {rate}");
                Propensity::Constant(rate)
            }
        }
    }
}

impl DoublyRobust {
    /// Clipped `ê(x, a)`.
    pub fn propensity(&self, x: &[f64], a: bool) -> f64 {
        let model = self.propensity.get_or_init(|| {
            Box::new(match &self.pending {
                Some(p) => p.fit(),
                None => Propensity::Constant(0.5),
            })
        });
        let p = match model {
            Propensity::Constant(p) => *p,
            Propensity::Network(net) => net.predict(&features(x, a)),
        };
        p.clamp(self.clip, 1.0 - self.clip)
    }

    pub fn fit(train: &[Unit<'_>], params: &DrParams, seed: u64) -> Result<Self> {
        if !(params.propensity_clip > 0.0 && params.propensity_clip < 0.5) {
            return Err(invalid("propensity_clip must lie in (0, 0.5)"));
        }
        let cfg = TrainConfig {
            hidden: alloc::vec![params.hidden],
            activation: Activation::Tanh,
            epochs: params.epochs,
            learning_rate: params.learning_rate,
            batch_size: None,
            l2: params.l2,
            early_stopping: None,
        };
        let mut heads = [Head::Constant(0.0), Head::Constant(0.0)];
        for arm in [false, true] {
            let d = design(train, Some(arm))?;
            if d.y.is_empty() {
                return Err(Error::EmptyArm(arm_name(arm)));
            }
            heads[arm as usize] = match params.outcome_head {
                HeadKind::Constant => Head::Constant(d.y.iter().sum::<f64>() / d.y.len() as f64),
                HeadKind::Network => fit_network_head(&d, &cfg, &mut arm_stream(seed, arm))?,
            };
        }
        let all = design(train, None)?;
        let targets: Vec<f64> = all.t.iter().map(|t| if *t { 1.0 } else { 0.0 }).collect();
        let rate = targets.iter().sum::<f64>() / targets.len() as f64;
        let propensity = OnceBox::new();
        let pending = match params.propensity_head {
            HeadKind::Constant => {
                let _ = propensity.set(Box::new(Propensity::Constant(rate)));
                None
            }
            HeadKind::Network => Some(PendingPropensity {
                x: all.x,
                dim: all.dim,
                targets,
                cfg,
                seed,
            }),
        };
        let [control, treated] = heads;
        Ok(DoublyRobust {
            heads: MultiHead {
                name: "dr",
                control,
                treated,
            },
            propensity,
            pending,
            clip: params.propensity_clip,
        })
    }
}

impl EffectEstimator for DoublyRobust {
    fn name(&self) -> &str {
        "dr"
    }

    fn potential_outcomes(&self, x: &[f64], a: bool) -> (f64, f64) {
        self.heads.potential_outcomes(x, a)
    }

    /// Augmented IPW: mean of `μ1 − μ0 + t(y − μ1)/ê − (1 − t)(y − μ0)/(1 − ê)`.
    fn corrected_ate(&self, units: &[Unit<'_>]) -> Option<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for u in units {
            let a = u.a?;
            let (m0, m1) = self.potential_outcomes(u.x, a);
            let e = self.propensity(u.x, a);
            total += m1 - m0;
            if u.t {
                total += (u.y - m1) / e;
            } else {
                total -= (u.y - m0) / (1.0 - e);
            }
            n += 1;
        }
        (n > 0).then(|| total / n as f64)
    }
}

fn fit_multi_mlp(train: &[Unit<'_>], params: &MlpParams, seed: u64) -> Result<MultiHead> {
    let cfg = TrainConfig {
        hidden: params.hidden.clone(),
        activation: Activation::Relu,
        epochs: params.epochs,
        learning_rate: params.learning_rate,
        batch_size: Some(params.batch_size),
        l2: params.l2,
        early_stopping: Some(EarlyStopping {
            validation_fraction: params.validation_fraction,
            patience: params.patience,
            tol: 1e-4,
        }),
    };
    let mut heads = [Head::Constant(0.0), Head::Constant(0.0)];
    for arm in [false, true] {
        let d = design(train, Some(arm))?;
        if d.y.is_empty() {
            return Err(Error::EmptyArm(arm_name(arm)));
        }
        heads[arm as usize] = fit_network_head(&d, &cfg, &mut arm_stream(seed, arm))?;
    }
    let [control, treated] = heads;
    Ok(MultiHead {
        name: "mlp_multi",
        control,
        treated,
    })
}

fn fit_multi_gp(train: &[Unit<'_>], params: &GpParams) -> Result<MultiHead> {
    let mut heads = [Head::Constant(0.0), Head::Constant(0.0)];
    for arm in [false, true] {
        let d = design(train, Some(arm))?;
        if d.y.is_empty() {
            return Err(Error::EmptyArm(arm_name(arm)));
        }
        heads[arm as usize] = Head::Gp(GaussianProcess::fit(&d.x, d.dim, &d.y, params)?);
    }
    let [control, treated] = heads;
    Ok(MultiHead {
        name: "gp_multi",
        control,
        treated,
    })
}

/// Fits the configured estimator on labeled training units.
///
/// Units are fitted in id order so the result does not depend on how the
/// caller happened to collect them.
pub fn fit_estimator(
    spec: &EstimatorSpec,
    train: &[Unit<'_>],
    seed: u64,
) -> Result<Box<dyn EffectEstimator>> {
    let mut sorted: Vec<Unit<'_>> = train.to_vec();
    sorted.sort_by_key(|u| u.id);
    Ok(match spec {
        EstimatorSpec::Dr(p) => Box::new(DoublyRobust::fit(&sorted, p, seed)?),
        EstimatorSpec::MlpMulti(p) => Box::new(fit_multi_mlp(&sorted, p, seed)?),
        EstimatorSpec::GpMulti(p) => Box::new(fit_multi_gp(&sorted, p)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AteMode {
    /// Mean of `ŷ1 − ŷ0`.
    PlugIn,
    /// The estimator's residual-corrected form when it has one (needs
    /// factual outcomes); plug-in otherwise.
    Corrected,
}

/// Average estimated effect over units with known confounder values.
pub fn estimate_ate(model: &dyn EffectEstimator, units: &[Unit<'_>], mode: AteMode) -> Result<f64> {
    if units.is_empty() {
        return Err(Error::EmptySet("estimate_ate"));
    }
    if mode == AteMode::Corrected {
        if let Some(v) = model.corrected_ate(units) {
            return Ok(v);
        }
    }
    let mut total = 0.0;
    for u in units {
        let a = u
            .a
            .ok_or_else(|| invalid(format!("unit {} has no confounder value", u.id)))?;
        total += model.effect(u.x, a);
    }
    Ok(total / units.len() as f64)
}

/// `p(A = 1 | x, t)`: a random forest on `(x, t)`, or the constant class
/// frequency when training holds a single class.
#[derive(Debug, Clone, PartialEq)]
pub enum AttributeModel {
    Forest(RandomForest),
    Constant(f64),
}

impl AttributeModel {
    pub fn predict(&self, x: &[f64], t: bool) -> f64 {
        match self {
            AttributeModel::Constant(p) => *p,
            AttributeModel::Forest(f) => {
                let mut feat = Vec::with_capacity(x.len() + 1);
                feat.extend_from_slice(x);
                feat.push(if t { 1.0 } else { 0.0 });
                f.predict_proba(&feat).clamp(0.0, 1.0)
            }
        }
    }

    /// Out-of-bag accuracy of the forest, if any unit was ever out of bag.
    pub fn oob_accuracy(&self) -> Option<f64> {
        match self {
            AttributeModel::Forest(f) => f.oob_accuracy(),
            AttributeModel::Constant(_) => None,
        }
    }
}

pub fn fit_attribute_model(train: &[Unit<'_>], params: &ForestParams, seed: u64) -> Result<AttributeModel> {
    let mut sorted: Vec<&Unit<'_>> = train.iter().collect();
    sorted.sort_by_key(|u| u.id);
    let dim = sorted.first().map_or(0, |u| u.x.len() + 1);
    let mut x = Vec::with_capacity(sorted.len() * dim);
    let mut y = Vec::with_capacity(sorted.len());
    for u in &sorted {
        let a = u
            .a
            .ok_or_else(|| invalid(format!("training unit {} has no observed confounder", u.id)))?;
        x.extend_from_slice(u.x);
        x.push(if u.t { 1.0 } else { 0.0 });
        y.push(a);
    }
    if y.is_empty() {
        return Err(Error::EmptySet("attribute model training"));
    }
    let ones = y.iter().filter(|a| **a).count();
    if ones == 0 || ones == y.len() {
        log::warn!(
            "attribute model trained on a single class ({} units); using constant p = {}",
            y.len(),
            if ones == 0 { 0 } else { 1 }
        );
        return Ok(AttributeModel::Constant(if ones == 0 { 0.0 } else { 1.0 }));
    }
    let mut rng = crate::rng::stream(seed, crate::rng::Stream::AttributeModel);
    Ok(AttributeModel::Forest(RandomForest::fit(&x, dim, &y, params, &mut rng)?))
}
