//! Effect-estimation metrics, sample-efficiency statistics and the analysis
//! exports (principal-component view, treated/control acquisition counts).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{DataPartition, SampleId, Unit, World};
use crate::error::{Error, Result};
use crate::estimators::EffectEstimator;

/// z for a two-sided 95% interval.
pub const Z95: f64 = 1.96;

/// Per-unit `(ŷ0, ŷ1)` or `(y0, y1)`.
pub type OutcomePair = (f64, f64);

fn check_aligned(a: &[OutcomePair], b: &[OutcomePair]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptySet("metric"));
    }
    Ok(())
}

/// `|mean(ŷ1 − ŷ0) − mean(y1 − y0)|`.
pub fn eps_ate(predicted: &[OutcomePair], truth: &[OutcomePair]) -> Result<f64> {
    check_aligned(predicted, truth)?;
    let n = predicted.len() as f64;
    let p: f64 = predicted.iter().map(|(y0, y1)| y1 - y0).sum::<f64>() / n;
    let t: f64 = truth.iter().map(|(y0, y1)| y1 - y0).sum::<f64>() / n;
    Ok((p - t).abs())
}

/// `mean((ŷ1 − ŷ0) − (y1 − y0))²`.
pub fn pehe(predicted: &[OutcomePair], truth: &[OutcomePair]) -> Result<f64> {
    check_aligned(predicted, truth)?;
    let n = predicted.len() as f64;
    Ok(predicted
        .iter()
        .zip(truth)
        .map(|((p0, p1), (t0, t1))| {
            let d = (p1 - p0) - (t1 - t0);
            d * d
        })
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub eps_ate: f64,
    pub pehe: f64,
}

/// Metrics of `model` on the test set, against the noiseless potential
/// outcomes and the true confounder values.
pub fn evaluate_on_test(
    model: &dyn EffectEstimator,
    world: &World,
    partition: &DataPartition,
) -> Result<TestMetrics> {
    let mut predicted = Vec::with_capacity(partition.test().len());
    let mut truth = Vec::with_capacity(partition.test().len());
    for id in partition.test() {
        let s = world.sample(*id);
        predicted.push(model.potential_outcomes(s.x(), s.truth.a));
        truth.push((s.truth.y0, s.truth.y1));
    }
    Ok(TestMetrics {
        eps_ate: eps_ate(&predicted, &truth)?,
        pehe: pehe(&predicted, &truth)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub n_acquired: usize,
    pub eps_ate: f64,
    pub pehe: f64,
    pub sqrt_pehe: f64,
    pub n_treated_acquired: usize,
    pub n_control_acquired: usize,
}

impl MetricsRecord {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::EpsAte => self.eps_ate,
            Metric::SqrtPehe => self.sqrt_pehe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    EpsAte,
    SqrtPehe,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::EpsAte => "eps_ate",
            Metric::SqrtPehe => "sqrt_pehe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquiredUnit {
    pub id: SampleId,
    pub iteration: usize,
    pub treated: bool,
}

/// Metrics of the estimator fitted with every confounder revealed and every
/// non-test unit in training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalReference {
    pub eps_ate: f64,
    pub sqrt_pehe: f64,
}

impl OptimalReference {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::EpsAte => self.eps_ate,
            Metric::SqrtPehe => self.sqrt_pehe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionTrace {
    pub realization: usize,
    pub seed: u64,
    pub strategy: String,
    pub estimator: String,
    pub records: Vec<MetricsRecord>,
    pub acquired: Vec<AcquiredUnit>,
    pub optimal: Option<OptimalReference>,
    /// Set when a fit or selection failed; records stop there.
    pub failure: Option<String>,
}

/// Outcome of [`samples_to_within`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reach {
    At(usize),
    Censored,
}

impl Reach {
    pub fn count(self) -> Option<usize> {
        match self {
            Reach::At(n) => Some(n),
            Reach::Censored => None,
        }
    }
}

/// Optimal values at or below this are treated as zero.
pub const ZERO_OPTIMAL: f64 = 1e-9;
/// Absolute tolerance used when the optimal value is zero.
pub const ABSOLUTE_TOLERANCE: f64 = 1e-3;

/// Threshold a metric must reach: `(1 + pct) × optimal`, or the absolute
/// tolerance when the optimal value is (numerically) zero.
pub fn within_threshold(optimal: f64, pct: f64) -> f64 {
    if optimal <= ZERO_OPTIMAL {
        ABSOLUTE_TOLERANCE
    } else {
        (1.0 + pct) * optimal
    }
}

/// Acquired count at the first record whose metric is within `pct` of the
/// optimal value.
pub fn samples_to_within(records: &[MetricsRecord], metric: Metric, optimal: f64, pct: f64) -> Reach {
    let threshold = within_threshold(optimal, pct);
    records
        .iter()
        .find(|r| r.metric(metric) <= threshold)
        .map_or(Reach::Censored, |r| Reach::At(r.n_acquired))
}

/// Cumulative `(treated, control)` acquisitions after each record.
pub fn arm_counts(trace: &AcquisitionTrace) -> Vec<(usize, usize)> {
    trace
        .records
        .iter()
        .map(|r| {
            trace
                .acquired
                .iter()
                .filter(|a| a.iteration <= r.iteration)
                .fold((0, 0), |(t, c), a| if a.treated { (t + 1, c) } else { (t, c + 1) })
        })
        .collect()
}

/// Variance of `eps_ate` over the last `window` records; `None` until the
/// window is full.
pub fn trailing_eps_ate_variance(records: &[MetricsRecord], window: usize) -> Option<f64> {
    if window < 2 || records.len() < window {
        return None;
    }
    let tail: Vec<f64> = records[records.len() - window..].iter().map(|r| r.eps_ate).collect();
    let (_, sd) = crate::data::mean_sd(&tail);
    Some(sd * sd)
}

/// Mean with a normal-approximation 95% half-width `1.96 sd / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

pub fn mean_ci(values: &[f64]) -> Result<MeanCi> {
    if values.len() < 2 {
        return Err(Error::TooFewValues {
            needed: 2,
            found: values.len(),
        });
    }
    let (mean, sd) = crate::data::mean_sd(values);
    Ok(MeanCi {
        mean,
        half_width: Z95 * sd / libm::sqrt(values.len() as f64),
        n: values.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for "first mean is greater than second".
    pub p_greater: f64,
    pub p_two_sided: f64,
}

fn t_pvalues(t: f64, df: f64) -> (f64, f64) {
    if t.is_infinite() {
        return if t > 0.0 { (0.0, 0.0) } else { (1.0, 0.0) };
    }
    if t.is_nan() {
        return (1.0, 1.0);
    }
    let dist = StudentsT::new(0.0, 1.0, df.max(1e-6)).expect("valid t distribution");
    let upper = 1.0 - dist.cdf(t);
    (upper, (2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0))
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else if num < 0.0 {
        f64::NEG_INFINITY
    } else {
        f64::NAN
    }
}

/// Welch's unequal-variance two-sample t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(Error::TooFewValues {
                needed: 2,
                found: s.len(),
            });
        }
    }
    let (ma, sa) = crate::data::mean_sd(a);
    let (mb, sb) = crate::data::mean_sd(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sa * sa / na, sb * sb / nb);
    let se = libm::sqrt(va + vb);
    let t = ratio(ma - mb, se);
    let df = if va + vb > 0.0 {
        (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0))
    } else {
        na + nb - 2.0
    };
    let (p_greater, p_two_sided) = t_pvalues(t, df);
    Ok(TTest {
        t,
        df,
        p_greater,
        p_two_sided,
    })
}

/// Paired t-test on `a[i] − b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::TooFewValues {
            needed: 2,
            found: a.len(),
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, s) = crate::data::mean_sd(&d);
    let n = d.len() as f64;
    let t = ratio(m, s / libm::sqrt(n));
    let df = n - 1.0;
    let (p_greater, p_two_sided) = t_pvalues(t, df);
    Ok(TTest {
        t,
        df,
        p_greater,
        p_two_sided,
    })
}

pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySummary {
    pub strategy: String,
    pub estimator: String,
    pub metric: Metric,
    /// Mean and CI over realizations that reached the threshold.
    pub samples: Option<MeanCi>,
    pub n_realizations: usize,
    pub n_censored: usize,
    pub optimal: Option<MeanCi>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub n_acquired: f64,
    pub eps_ate: MeanCi,
    pub sqrt_pehe: MeanCi,
    pub n_treated: f64,
    pub n_control: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub estimator: String,
    pub metric: Metric,
    pub better: String,
    pub worse: String,
    /// Welch test that `worse` needs more samples than `better`.
    pub test: TTest,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub efficiency: Vec<EfficiencySummary>,
    pub curves: BTreeMap<(String, String), Vec<CurvePoint>>,
    pub comparisons: Vec<Comparison>,
}

type GroupKey = (String, String);

/// Sample-efficiency table, per-iteration mean curves and pairwise Welch
/// comparisons, grouped by `(strategy, estimator)`. Failed traces are
/// skipped. Output does not depend on trace order.
pub fn summarize(traces: &[AcquisitionTrace], pct: f64) -> Result<Summary> {
    let mut groups: BTreeMap<GroupKey, Vec<&AcquisitionTrace>> = BTreeMap::new();
    for t in traces.iter().filter(|t| t.failure.is_none()) {
        groups
            .entry((t.strategy.clone(), t.estimator.clone()))
            .or_default()
            .push(t);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|t| (t.realization, t.seed));
        if g.len() < 2 {
            return Err(Error::TooFewValues {
                needed: 2,
                found: g.len(),
            });
        }
    }

    let mut efficiency = Vec::new();
    let mut reached: BTreeMap<(GroupKey, Metric), Vec<f64>> = BTreeMap::new();
    for (key, g) in &groups {
        for metric in [Metric::EpsAte, Metric::SqrtPehe] {
            let mut counts = Vec::new();
            let mut optimal = Vec::new();
            let mut censored = 0;
            for t in g {
                let Some(opt) = t.optimal else {
                    censored += 1;
                    continue;
                };
                optimal.push(opt.metric(metric));
                match samples_to_within(&t.records, metric, opt.metric(metric), pct) {
                    Reach::At(n) => counts.push(n as f64),
                    Reach::Censored => censored += 1,
                }
            }
            efficiency.push(EfficiencySummary {
                strategy: key.0.clone(),
                estimator: key.1.clone(),
                metric,
                samples: mean_ci(&counts).ok(),
                n_realizations: g.len(),
                n_censored: censored,
                optimal: mean_ci(&optimal).ok(),
            });
            reached.insert((key.clone(), metric), counts);
        }
    }

    let mut curves = BTreeMap::new();
    for (key, g) in &groups {
        let len = g.iter().map(|t| t.records.len()).min().unwrap_or(0);
        let mut pts = Vec::with_capacity(len);
        for i in 0..len {
            let col = |f: fn(&MetricsRecord) -> f64| -> Vec<f64> { g.iter().map(|t| f(&t.records[i])).collect() };
            let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            pts.push(CurvePoint {
                iteration: i,
                n_acquired: mean(col(|r| r.n_acquired as f64)),
                eps_ate: mean_ci(&col(|r| r.eps_ate))?,
                sqrt_pehe: mean_ci(&col(|r| r.sqrt_pehe))?,
                n_treated: mean(col(|r| r.n_treated_acquired as f64)),
                n_control: mean(col(|r| r.n_control_acquired as f64)),
            });
        }
        curves.insert(key.clone(), pts);
    }

    let mut comparisons = Vec::new();
    for ((ka, ma), a) in &reached {
        for ((kb, mb), b) in &reached {
            if ka.1 != kb.1 || ma != mb || ka.0 == kb.0 || a.len() < 2 || b.len() < 2 {
                continue;
            }
            let mean_a = a.iter().sum::<f64>() / a.len() as f64;
            let mean_b = b.iter().sum::<f64>() / b.len() as f64;
            if mean_a >= mean_b {
                continue;
            }
            let test = welch_t_test(b, a)?;
            comparisons.push(Comparison {
                estimator: ka.1.clone(),
                metric: *ma,
                better: ka.0.clone(),
                worse: kb.0.clone(),
                significant: test.p_greater < SIGNIFICANCE,
                test,
            });
        }
    }
    Ok(Summary {
        efficiency,
        curves,
        comparisons,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub id: SampleId,
    pub pc1: f64,
    pub pc2: f64,
    pub treated: bool,
}

/// Projects labeled units' `(x, a)` onto the top two principal components
/// of their covariance. Each component's sign is fixed so its
/// largest-magnitude loading is positive. A rank-1 cloud gets a zero second
/// coordinate.
pub fn pca_export(units: &[Unit<'_>]) -> Result<Vec<PcaPoint>> {
    if units.len() < 3 {
        return Err(Error::TooFewValues {
            needed: 3,
            found: units.len(),
        });
    }
    let rows: Vec<Vec<f64>> = units
        .iter()
        .map(|u| {
            u.a.map(|a| u.features_with(a))
                .ok_or_else(|| crate::error::invalid("pca needs observed confounder values"))
        })
        .collect::<Result<_>>()?;
    let d = rows[0].len();
    if d < 2 {
        return Err(Error::TooFewValues { needed: 2, found: d });
    }
    let (loadings, _) = principal_axes(&rows)?;
    let n = rows.len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    Ok(units
        .iter()
        .zip(&rows)
        .map(|(u, r)| {
            let proj = |axis: &[f64]| -> f64 { r.iter().zip(&mean).zip(axis).map(|((x, m), w)| (x - m) * w).sum() };
            PcaPoint {
                id: u.id,
                pc1: proj(&loadings[0]),
                pc2: proj(&loadings[1]),
                treated: u.t,
            }
        })
        .collect())
}

/// Top-two covariance eigenvectors (sign-normalized) and their
/// eigenvalues, descending. The second axis is zero if the data has rank 1.
pub fn principal_axes(rows: &[Vec<f64>]) -> Result<([Vec<f64>; 2], [f64; 2])> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if n < 2 || d < 2 {
        return Err(Error::TooFewValues {
            needed: 2,
            found: n.min(d),
        });
    }
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / (n as f64 - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axis = |k: usize| -> Vec<f64> {
        let col = eig.eigenvectors.column(order[k]);
        let mut v: Vec<f64> = col.iter().copied().collect();
        let lead = v
            .iter()
            .copied()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let l1 = eig.eigenvalues[order[0]];
    let l2 = eig.eigenvalues[order[1]];
    let mut second = axis(1);
    let mut l2_out = l2;
    if !(l2 > 1e-12 * l1.abs().max(1e-300)) {
        log::warn!("covariance has rank < 2; second principal component set to zero");
        second.iter_mut().for_each(|x| *x = 0.0);
        l2_out = 0.0;
    }
    Ok(([axis(0), second], [l1, l2_out]))
}
