//! Semi-synthetic world generation: treatment assignment, potential outcomes
//! (control mean `exp((x + W)·β)`, treated mean `(x + W)·β`), MNAR masking of
//! the confounder, the confounder-dependence variants, and the oracle.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{
    self, ColumnKind, CovariateTable, DataPartition, GroundTruth, Sample, SampleId, World,
};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Stream};

pub const CLIP_LO: f64 = 0.005;
pub const CLIP_HI: f64 = 0.995;

/// Features whose outcome coefficients are fixed by configuration and whose
/// offset `W` is zero.
pub const NAMED_FEATURES: [&str; 6] = ["b.marr", "mom.scoll", "work.dur", "momwhite", "cig", "drugs"];

/// Shipped default for every named coefficient. Not a published value.
pub const DEFAULT_NAMED_BETA: f64 = 0.4;

const BETA_VALUES: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
const BETA_PROBS_CONTINUOUS: [f64; 5] = [0.5, 0.125, 0.125, 0.125, 0.125];
const BETA_PROBS_BINARY: [f64; 5] = [0.6, 0.1, 0.1, 0.1, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentParams {
    pub subset_columns: Vec<String>,
    pub xi: Vec<f64>,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl TreatmentParams {
    pub fn new(subset_columns: Vec<String>, xi: Vec<f64>) -> Result<Self> {
        let p = TreatmentParams {
            subset_columns,
            xi,
            clip_lo: CLIP_LO,
            clip_hi: CLIP_HI,
        };
        p.validate()?;
        Ok(p)
    }

    /// `xi` drawn uniformly on `[0, xi_max]` per column.
    pub fn drawn(subset_columns: Vec<String>, xi_max: f64, seed: u64) -> Result<Self> {
        if !(xi_max >= 0.0) {
            return Err(invalid("xi_max must be non-negative"));
        }
        let mut rng = rng::stream(seed, Stream::TreatmentCoefficients);
        let xi = subset_columns
            .iter()
            .map(|_| rng.random::<f64>() * xi_max)
            .collect();
        Self::new(subset_columns, xi)
    }

    fn validate(&self) -> Result<()> {
        if self.xi.len() != self.subset_columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.subset_columns.len(),
                found: self.xi.len(),
            });
        }
        if !(0.0 < self.clip_lo && self.clip_lo < self.clip_hi && self.clip_hi < 1.0) {
            return Err(invalid("clip bounds must satisfy 0 < lo < hi < 1"));
        }
        Ok(())
    }
}

pub fn clip_probability(score: f64, lo: f64, hi: f64) -> f64 {
    score.clamp(lo, hi)
}

/// `clip(x_sub · xi, lo, hi)` per row.
pub fn treatment_probabilities(table: &CovariateTable, params: &TreatmentParams) -> Result<Vec<f64>> {
    params.validate()?;
    let idx = params
        .subset_columns
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..table.n_samples())
        .map(|r| {
            let score: f64 = idx.iter().zip(&params.xi).map(|(&c, xi)| table.get(r, c) * xi).sum();
            clip_probability(score, params.clip_lo, params.clip_hi)
        })
        .collect())
}

pub fn generate_treatments(
    table: &CovariateTable,
    params: &TreatmentParams,
    seed: u64,
) -> Result<Vec<bool>> {
    let probs = treatment_probabilities(table, params)?;
    let mut rng = rng::stream(seed, Stream::Treatment);
    Ok(probs.iter().map(|p| rng.random::<f64>() < *p).collect())
}

/// Coefficients and offsets over every covariate, including the confounder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSurface {
    pub columns: Vec<String>,
    pub beta: Vec<f64>,
    pub w_offset: Vec<f64>,
    pub noise_sd: f64,
}

impl OutcomeSurface {
    /// `(x + W) · β` for one row aligned with `columns`.
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        row.iter()
            .zip(&self.w_offset)
            .zip(&self.beta)
            .map(|((x, w), b)| (x + w) * b)
            .sum()
    }
}

pub fn default_named_beta() -> BTreeMap<String, f64> {
    NAMED_FEATURES
        .iter()
        .map(|n| (n.to_string(), DEFAULT_NAMED_BETA))
        .collect()
}

fn draw_categorical<R: Rng>(rng: &mut R, probs: &[f64; 5]) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (v, p) in BETA_VALUES.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *v;
        }
    }
    BETA_VALUES[4]
}

/// Draws `β` for unnamed covariates from the kind-specific categorical
/// distribution; `named_beta` keys are column names (a remap is simply a
/// different set of keys). `W` is 0 for named columns, 0.5 elsewhere.
pub fn sample_outcome_surface(
    table: &CovariateTable,
    named_beta: &BTreeMap<String, f64>,
    noise_sd: f64,
    seed: u64,
) -> Result<OutcomeSurface> {
    if !(noise_sd >= 0.0) {
        return Err(invalid("noise_sd must be non-negative"));
    }
    for name in named_beta.keys() {
        table.column_index(name)?;
    }
    let mut rng = rng::stream(seed, Stream::OutcomeSurface);
    let mut beta = Vec::with_capacity(table.n_columns());
    let mut w_offset = Vec::with_capacity(table.n_columns());
    for c in table.columns() {
        // Always draw so named columns do not shift later draws.
        let drawn = match c.kind {
            ColumnKind::Continuous => draw_categorical(&mut rng, &BETA_PROBS_CONTINUOUS),
            ColumnKind::Binary => draw_categorical(&mut rng, &BETA_PROBS_BINARY),
        };
        match named_beta.get(&c.name) {
            Some(b) => {
                beta.push(*b);
                w_offset.push(0.0);
            }
            None => {
                beta.push(drawn);
                w_offset.push(0.5);
            }
        }
    }
    Ok(OutcomeSurface {
        columns: table.columns().iter().map(|c| c.name.clone()).collect(),
        beta,
        w_offset,
        noise_sd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcomes {
    pub y0_true: f64,
    pub y1_true: f64,
    pub y_factual: f64,
}

pub fn generate_outcomes(
    table: &CovariateTable,
    t: &[bool],
    surface: &OutcomeSurface,
    seed: u64,
) -> Result<Vec<Outcomes>> {
    if surface.beta.len() != table.n_columns() || surface.w_offset.len() != table.n_columns() {
        return Err(Error::DimensionMismatch {
            expected: table.n_columns(),
            found: surface.beta.len(),
        });
    }
    if t.len() != table.n_samples() {
        return Err(Error::DimensionMismatch {
            expected: table.n_samples(),
            found: t.len(),
        });
    }
    let mut rng = rng::stream(seed, Stream::Outcomes);
    Ok((0..table.n_samples())
        .map(|r| {
            let lp = surface.linear_predictor(table.row(r));
            let y0 = libm::exp(lp);
            let y1 = lp;
            let noise: f64 = rng.sample(StandardNormal);
            let mean = if t[r] { y1 } else { y0 };
            Outcomes {
                y0_true: y0,
                y1_true: y1,
                y_factual: mean + surface.noise_sd * noise,
            }
        })
        .collect())
}

/// Whether the masking score includes its Gaussian term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskNoise {
    Gaussian,
    /// All `u_i = 0`; useful for checking the score ordering.
    Disabled,
}

/// `(2 - A) * 0.2 + 0.5 * u`, `u ~ N(0, 1)`.
pub fn mnar_score(a: bool, u: f64) -> f64 {
    (2.0 - if a { 1.0 } else { 0.0 }) * 0.2 + u * 0.5
}

/// Ids ordered by descending masking score; ties (only possible without
/// noise) fall back to a seeded key.
pub(crate) fn mnar_ranking(samples: &[&Sample], noise: MaskNoise, seed: u64) -> Vec<SampleId> {
    let mut rng = rng::stream(seed, Stream::Mask);
    let mut scored: Vec<(f64, u64, SampleId)> = samples
        .iter()
        .map(|s| {
            let u = match noise {
                MaskNoise::Gaussian => rng.sample(StandardNormal),
                MaskNoise::Disabled => 0.0,
            };
            (mnar_score(s.truth.a, u), rng::tiebreak_key(seed, s.id().0 as u64), s.id())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, _, id)| id).collect()
}

/// Number of units masked for a fraction: `ceil(fraction * n)`.
pub fn masked_count(n: usize, fraction: f64) -> usize {
    let m = libm::ceil(fraction * n as f64 - 1e-9).max(0.0) as usize;
    m.min(n)
}

pub fn apply_mnar_mask(samples: &[Sample], mask_fraction: f64, seed: u64) -> Result<BTreeSet<SampleId>> {
    apply_mnar_mask_with(samples, mask_fraction, MaskNoise::Gaussian, seed)
}

pub fn apply_mnar_mask_with(
    samples: &[Sample],
    mask_fraction: f64,
    noise: MaskNoise,
    seed: u64,
) -> Result<BTreeSet<SampleId>> {
    if !(0.0..=1.0).contains(&mask_fraction) {
        return Err(invalid(format!("mask fraction {mask_fraction} outside [0, 1]")));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let ranked = mnar_ranking(&refs, noise, seed);
    let m = masked_count(samples.len(), mask_fraction);
    Ok(ranked[..m].iter().copied().collect())
}

/// How the confounder relates to the other covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AVariant {
    /// Random permutation of the observed values: independent of `X`.
    IndependentPermuted,
    /// Keep a random `retain_fraction` of the original values; redraw the
    /// rest from Bernoulli(original A=1 frequency).
    OriginalFraction { retain_fraction: f64 },
    /// Latent `z ~ N(0, 1)` jointly Gaussian with a regenerated birthweight
    /// column (correlation `rho`); `A = 1` for the top `p̂` share of `z`.
    BivariateGaussian {
        rho: f64,
        #[serde(default = "default_birthweight")]
        birthweight_column: String,
    },
}

fn default_birthweight() -> String {
    "bw".to_string()
}

impl Default for AVariant {
    fn default() -> Self {
        AVariant::IndependentPermuted
    }
}

impl AVariant {
    pub fn validate(&self) -> Result<()> {
        match self {
            AVariant::IndependentPermuted => Ok(()),
            AVariant::OriginalFraction { retain_fraction } => {
                if (0.0..=1.0).contains(retain_fraction) {
                    Ok(())
                } else {
                    Err(invalid(format!("retain_fraction {retain_fraction} outside [0, 1]")))
                }
            }
            AVariant::BivariateGaussian { rho, .. } => {
                if (0.0..=1.0).contains(rho) {
                    Ok(())
                } else {
                    Err(invalid(format!("rho {rho} outside [0, 1]")))
                }
            }
        }
    }
}

/// Result of [`apply_a_variant`].
#[derive(Debug, Clone, PartialEq)]
pub struct AVariantDraw {
    pub a: Vec<f64>,
    /// Regenerated birthweight column `(index, values)` in bivariate mode.
    pub birthweight: Option<(usize, Vec<f64>)>,
    /// Latent Gaussian behind `a` in bivariate mode.
    pub latent: Option<Vec<f64>>,
}

pub fn apply_a_variant(
    table: &CovariateTable,
    a_column: &str,
    variant: &AVariant,
    seed: u64,
) -> Result<AVariantDraw> {
    variant.validate()?;
    let a_idx = table.column_index(a_column)?;
    if table.columns()[a_idx].kind != ColumnKind::Binary {
        return Err(invalid(format!("confounder column `{a_column}` must be binary")));
    }
    let original = table.column_values(a_idx);
    let n = original.len();
    let p_hat = if n == 0 {
        0.0
    } else {
        original.iter().sum::<f64>() / n as f64
    };
    let mut rng = rng::stream(seed, Stream::AVariant);
    match variant {
        AVariant::IndependentPermuted => {
            let mut a = original;
            a.shuffle(&mut rng);
            Ok(AVariantDraw {
                a,
                birthweight: None,
                latent: None,
            })
        }
        AVariant::OriginalFraction { retain_fraction } => {
            let n_replace = libm::round((1.0 - retain_fraction) * n as f64) as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let draw = Bernoulli::new(p_hat).map_err(|e| invalid(format!("{e}")))?;
            let mut a = original;
            for &i in &order[..n_replace] {
                a[i] = if draw.sample(&mut rng) { 1.0 } else { 0.0 };
            }
            Ok(AVariantDraw {
                a,
                birthweight: None,
                latent: None,
            })
        }
        AVariant::BivariateGaussian {
            rho,
            birthweight_column,
        } => {
            let b_idx = table.column_index(birthweight_column)?;
            let (b_mean, b_sd) = data::mean_sd(&table.column_values(b_idx));
            let resid = libm::sqrt((1.0 - rho * rho).max(0.0));
            let mut z = Vec::with_capacity(n);
            let mut b = Vec::with_capacity(n);
            for _ in 0..n {
                let z_i: f64 = rng.sample(StandardNormal);
                let e_i: f64 = rng.sample(StandardNormal);
                z.push(z_i);
                b.push(b_mean + b_sd * (rho * z_i + resid * e_i));
            }
            let n_ones = libm::round(p_hat * n as f64) as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| z[j].total_cmp(&z[i]));
            let mut a = alloc::vec![0.0; n];
            for &i in &order[..n_ones] {
                a[i] = 1.0;
            }
            Ok(AVariantDraw {
                a,
                birthweight: Some((b_idx, b)),
                latent: Some(z),
            })
        }
    }
}

/// Treatment-assignment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreatmentConfig {
    /// Columns forming `X_sub`; `None` means every covariate including the
    /// confounder.
    pub columns: Option<Vec<String>>,
    /// Explicit coefficients; drawn uniformly on `[0, xi_max]` when absent.
    pub xi: Option<Vec<f64>>,
    pub xi_max: f64,
}

impl Default for TreatmentConfig {
    fn default() -> Self {
        TreatmentConfig {
            columns: None,
            xi: None,
            xi_max: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeConfig {
    pub named_beta: BTreeMap<String, f64>,
    pub noise_sd: f64,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        OutcomeConfig {
            named_beta: default_named_beta(),
            noise_sd: 1.0,
        }
    }
}

/// Everything needed to turn a raw covariate table into one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub confounder_column: String,
    /// Share of non-test units whose confounder is masked.
    pub mask_fraction: f64,
    pub test_fraction: f64,
    pub a_variant: AVariant,
    pub treatment: TreatmentConfig,
    pub outcome: OutcomeConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            confounder_column: "momwhite".to_string(),
            mask_fraction: 0.95,
            test_fraction: 0.25,
            a_variant: AVariant::IndependentPermuted,
            treatment: TreatmentConfig::default(),
            outcome: OutcomeConfig::default(),
        }
    }
}

impl SimulationConfig {
    /// Initially labeled share of all units: the unmasked part of the
    /// non-test set.
    pub fn initial_labeled_fraction(&self) -> f64 {
        (1.0 - self.mask_fraction) * (1.0 - self.test_fraction)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(invalid("mask_fraction must lie in (0, 1)"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(invalid("test_fraction must lie in (0, 1)"));
        }
        if !(self.treatment.xi_max >= 0.0) {
            return Err(invalid("treatment.xi_max must be non-negative"));
        }
        if !(self.outcome.noise_sd >= 0.0) {
            return Err(invalid("outcome.noise_sd must be non-negative"));
        }
        self.a_variant.validate()
    }
}

/// One realization: the world, its initial partition and the drawn
/// generating parameters.
#[derive(Debug, Clone)]
pub struct Realization {
    pub world: World,
    pub partition: DataPartition,
    pub treatment: TreatmentParams,
    pub surface: OutcomeSurface,
}

/// Confounder variant, normalization, treatments, outcomes, then the split.
/// One seed fixes everything.
pub fn simulate(raw: &CovariateTable, cfg: &SimulationConfig, seed: u64) -> Result<Realization> {
    cfg.validate()?;
    let mut table = raw.clone();
    let a_idx = table.column_index(&cfg.confounder_column)?;
    let draw = apply_a_variant(&table, &cfg.confounder_column, &cfg.a_variant, seed)?;
    table.set_column(a_idx, &draw.a)?;
    if let Some((b_idx, b)) = &draw.birthweight {
        table.set_column(*b_idx, b)?;
    }
    let (table, _) = data::normalize(&table)?;

    let subset = match &cfg.treatment.columns {
        Some(c) => c.clone(),
        None => table.columns().iter().map(|c| c.name.clone()).collect(),
    };
    let treatment = match &cfg.treatment.xi {
        Some(xi) => TreatmentParams::new(subset, xi.clone())?,
        None => TreatmentParams::drawn(subset, cfg.treatment.xi_max, seed)?,
    };
    let t = generate_treatments(&table, &treatment, seed)?;
    let surface =
        sample_outcome_surface(&table, &cfg.outcome.named_beta, cfg.outcome.noise_sd, seed)?;
    let outcomes = generate_outcomes(&table, &t, &surface, seed)?;

    let feature_cols: Vec<usize> = (0..table.n_columns()).filter(|&c| c != a_idx).collect();
    let feature_names = feature_cols
        .iter()
        .map(|&c| table.columns()[c].name.clone())
        .collect();
    let samples: Vec<Sample> = (0..table.n_samples())
        .map(|r| {
            let row = table.row(r);
            let x = feature_cols.iter().map(|&c| row[c]).collect();
            Sample::new(
                SampleId(r as u32),
                x,
                t[r],
                outcomes[r].y_factual,
                GroundTruth {
                    a: row[a_idx] == 1.0,
                    y0: outcomes[r].y0_true,
                    y1: outcomes[r].y1_true,
                },
            )
        })
        .collect();
    let partition = data::partition(
        &samples,
        cfg.initial_labeled_fraction(),
        cfg.test_fraction,
        seed,
    )?;
    let world = World::new(
        feature_names,
        cfg.confounder_column.clone(),
        table.ids().to_vec(),
        samples,
    );
    Ok(Realization {
        world,
        partition,
        treatment,
        surface,
    })
}

/// Reveals the true confounder for pool units and moves them to train.
/// Any id outside the pool (including a second request for an already
/// revealed unit) fails the whole call.
pub fn oracle_reveal(
    world: &World,
    partition: &mut DataPartition,
    ids: &[SampleId],
) -> Result<Vec<(SampleId, bool)>> {
    partition.acquire(ids)?;
    Ok(ids.iter().map(|&id| (id, world.sample(id).truth.a)).collect())
}
