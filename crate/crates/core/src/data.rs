//! Record types, covariate tables, normalization and partition bookkeeping.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, Stream};
use crate::simulate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Column {
            name: name.into(),
            kind,
        }
    }
}

/// Fully observed covariates, one row per unit, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    columns: Vec<Column>,
    ids: Vec<String>,
    values: Vec<f64>,
}

impl CovariateTable {
    /// Builds a table, checking that names are unique, every cell is finite
    /// and binary columns hold only 0 or 1.
    pub fn new(columns: Vec<Column>, ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::DuplicateColumn(c.name.clone()));
            }
        }
        let width = columns.len();
        if values.len() != ids.len() * width {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * width,
                found: values.len(),
            });
        }
        for (row, chunk) in values.chunks(width.max(1)).enumerate() {
            for (col, v) in chunk.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Cell {
                        row,
                        column: columns[col].name.clone(),
                        reason: "missing or non-finite value".to_string(),
                    });
                }
                if columns[col].kind == ColumnKind::Binary && *v != 0.0 && *v != 1.0 {
                    return Err(Error::Cell {
                        row,
                        column: columns[col].name.clone(),
                        reason: format!("binary column holds {v}"),
                    });
                }
            }
        }
        Ok(CovariateTable {
            columns,
            ids,
            values,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.ids.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.columns.len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.columns.len() + col]
    }

    pub fn column_values(&self, col: usize) -> Vec<f64> {
        (0..self.n_samples()).map(|r| self.get(r, col)).collect()
    }

    /// Replaces one column's values, re-validating binary cells.
    pub fn set_column(&mut self, col: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.n_samples() {
            return Err(Error::DimensionMismatch {
                expected: self.n_samples(),
                found: values.len(),
            });
        }
        let w = self.columns.len();
        for (row, v) in values.iter().enumerate() {
            if self.columns[col].kind == ColumnKind::Binary && *v != 0.0 && *v != 1.0 {
                return Err(Error::Cell {
                    row,
                    column: self.columns[col].name.clone(),
                    reason: format!("binary column holds {v}"),
                });
            }
            self.values[row * w + col] = *v;
        }
        Ok(())
    }
}

/// Per-column generating distribution for synthetic covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ColumnDistribution {
    Normal { name: String, mean: f64, sd: f64 },
    Bernoulli { name: String, p: f64 },
}

impl ColumnDistribution {
    pub fn name(&self) -> &str {
        match self {
            ColumnDistribution::Normal { name, .. } | ColumnDistribution::Bernoulli { name, .. } => {
                name
            }
        }
    }

    fn kind(&self) -> ColumnKind {
        match self {
            ColumnDistribution::Normal { .. } => ColumnKind::Continuous,
            ColumnDistribution::Bernoulli { .. } => ColumnKind::Binary,
        }
    }
}

fn normal(name: &str, mean: f64, sd: f64) -> ColumnDistribution {
    ColumnDistribution::Normal {
        name: name.to_string(),
        mean,
        sd,
    }
}

fn bernoulli(name: &str, p: f64) -> ColumnDistribution {
    ColumnDistribution::Bernoulli {
        name: name.to_string(),
        p,
    }
}

/// A stand-in with the IHDP column names and kinds (6 continuous, 20 binary
/// including `momwhite`). Marginals are rough and columns are independent.
pub fn ihdp_like_columns() -> Vec<ColumnDistribution> {
    let mut cols = alloc::vec![
        normal("bw", 2000.0, 450.0),
        normal("b.head", 32.0, 2.5),
        normal("preterm", 7.0, 2.5),
        normal("birth.o", 2.0, 1.1),
        normal("nnhealth", 100.0, 12.0),
        normal("momage", 24.0, 6.0),
    ];
    let binaries = [
        ("sex", 0.5),
        ("twin", 0.09),
        ("b.marr", 0.52),
        ("mom.lths", 0.37),
        ("mom.hs", 0.32),
        ("mom.scoll", 0.20),
        ("cig", 0.38),
        ("first", 0.43),
        ("booze", 0.09),
        ("drugs", 0.08),
        ("work.dur", 0.55),
        ("prenatal", 0.96),
        ("ark", 0.14),
        ("ein", 0.16),
        ("har", 0.17),
        ("mia", 0.12),
        ("pen", 0.13),
        ("tex", 0.11),
        ("was", 0.13),
        ("momwhite", 0.50),
    ];
    cols.extend(binaries.iter().map(|(n, p)| bernoulli(n, *p)));
    cols
}

/// Draws `n` rows column by column from one seeded stream.
pub fn synthesize_covariates(
    n: usize,
    spec: &[ColumnDistribution],
    seed: u64,
) -> Result<CovariateTable> {
    let mut rng = rng::stream(seed, Stream::Covariates);
    let width = spec.len();
    let mut values = alloc::vec![0.0; n * width];
    for (col, dist) in spec.iter().enumerate() {
        match dist {
            ColumnDistribution::Normal { name, mean, sd } => {
                if !(*sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
                    return Err(invalid(format!("column `{name}`: sd must be positive")));
                }
                let d = Normal::new(*mean, *sd).map_err(|e| invalid(format!("{name}: {e}")))?;
                for row in 0..n {
                    values[row * width + col] = d.sample(&mut rng);
                }
            }
            ColumnDistribution::Bernoulli { name, p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(invalid(format!("column `{name}`: p={p} outside [0, 1]")));
                }
                let d = Bernoulli::new(*p).map_err(|e| invalid(format!("{name}: {e}")))?;
                for row in 0..n {
                    values[row * width + col] = if d.sample(&mut rng) { 1.0 } else { 0.0 };
                }
            }
        }
    }
    let columns = spec.iter().map(|d| Column::new(d.name(), d.kind())).collect();
    let ids = (0..n).map(|i| format!("{}", i + 1)).collect();
    CovariateTable::new(columns, ids, values)
}

/// Stored affine maps: `Some((mean, sd))` for continuous columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub params: Vec<Option<(f64, f64)>>,
}

impl Normalizer {
    pub fn apply(&self, table: &CovariateTable) -> Result<CovariateTable> {
        if self.params.len() != table.n_columns() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                found: table.n_columns(),
            });
        }
        let mut out = table.clone();
        let w = out.columns.len();
        for (col, p) in self.params.iter().enumerate() {
            if let Some((mean, sd)) = p {
                for row in 0..out.n_samples() {
                    let v = &mut out.values[row * w + col];
                    *v = (*v - mean) / sd;
                }
            }
        }
        Ok(out)
    }
}

/// Z-scores continuous columns (sample sd, n - 1 denominator); binary columns
/// are left as 0/1.
pub fn normalize(table: &CovariateTable) -> Result<(CovariateTable, Normalizer)> {
    let n = table.n_samples();
    if n < 2 {
        return Err(Error::TooFewValues { needed: 2, found: n });
    }
    let mut params = Vec::with_capacity(table.n_columns());
    for (col, c) in table.columns.iter().enumerate() {
        match c.kind {
            ColumnKind::Binary => params.push(None),
            ColumnKind::Continuous => {
                let vals = table.column_values(col);
                let (mean, sd) = mean_sd(&vals);
                if !(sd > 1e-12) {
                    return Err(Error::ZeroVariance(c.name.clone()));
                }
                params.push(Some((mean, sd)));
            }
        }
    }
    let norm = Normalizer { params };
    Ok((norm.apply(table)?, norm))
}

/// Mean and sample standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, libm::sqrt(ss / (n - 1.0)))
}

/// Dense index of a unit within one realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleId(pub u32);

impl SampleId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Simulator-only quantities. Readable only inside this crate; strategies
/// and estimators receive [`Unit`] views that never carry them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GroundTruth {
    pub a: bool,
    pub y0: f64,
    pub y1: f64,
}

/// One simulated unit. `y` is the noisy factual outcome under `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    id: SampleId,
    x: Vec<f64>,
    t: bool,
    y: f64,
    pub(crate) truth: GroundTruth,
}

impl Sample {
    pub(crate) fn new(id: SampleId, x: Vec<f64>, t: bool, y: f64, truth: GroundTruth) -> Self {
        Sample { id, x, t, y, truth }
    }

    pub fn id(&self) -> SampleId {
        self.id
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn t(&self) -> bool {
        self.t
    }

    pub fn y(&self) -> f64 {
        self.y
    }
}

/// What a strategy or estimator may see of a unit: `a` is `None` unless the
/// confounder has been acquired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit<'a> {
    pub id: SampleId,
    pub x: &'a [f64],
    pub a: Option<bool>,
    pub t: bool,
    pub y: f64,
}

impl Unit<'_> {
    /// `(x, a)` as one feature vector.
    pub fn features_with(&self, a: bool) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.x.len() + 1);
        f.extend_from_slice(self.x);
        f.push(if a { 1.0 } else { 0.0 });
        f
    }
}

/// One simulated world: covariates with the confounder split out.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub feature_names: Vec<String>,
    pub confounder_name: String,
    pub labels: Vec<String>,
    samples: Vec<Sample>,
}

impl World {
    pub(crate) fn new(
        feature_names: Vec<String>,
        confounder_name: String,
        labels: Vec<String>,
        samples: Vec<Sample>,
    ) -> Self {
        World {
            feature_names,
            confounder_name,
            labels,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, id: SampleId) -> &Sample {
        &self.samples[id.index()]
    }

    pub fn label(&self, id: SampleId) -> &str {
        &self.labels[id.index()]
    }

    /// Full rows including ground truth, for exporting a simulated world.
    pub fn truth_rows(&self) -> impl Iterator<Item = TruthRow<'_>> {
        self.samples.iter().map(|s| TruthRow {
            id: s.id,
            label: &self.labels[s.id.index()],
            x: &s.x,
            a: s.truth.a,
            t: s.t,
            y: s.y,
            y0: s.truth.y0,
            y1: s.truth.y1,
        })
    }
}

/// Exported row with ground truth. Produced only by [`World::truth_rows`].
#[derive(Debug, Clone, Copy)]
pub struct TruthRow<'a> {
    pub id: SampleId,
    pub label: &'a str,
    pub x: &'a [f64],
    pub a: bool,
    pub t: bool,
    pub y: f64,
    pub y0: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Pool,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Pool => "pool",
            Split::Test => "test",
        }
    }
}

/// Disjoint train / pool / test id sets. Train units have their confounder
/// observed, pool units do not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPartition {
    train: BTreeSet<SampleId>,
    pool: BTreeSet<SampleId>,
    test: BTreeSet<SampleId>,
}

impl DataPartition {
    pub fn from_sets(
        train: BTreeSet<SampleId>,
        pool: BTreeSet<SampleId>,
        test: BTreeSet<SampleId>,
    ) -> Result<Self> {
        if !train.is_disjoint(&pool) || !train.is_disjoint(&test) || !pool.is_disjoint(&test) {
            return Err(invalid("partition sets overlap"));
        }
        Ok(DataPartition { train, pool, test })
    }

    pub fn train(&self) -> &BTreeSet<SampleId> {
        &self.train
    }

    pub fn pool(&self) -> &BTreeSet<SampleId> {
        &self.pool
    }

    pub fn test(&self) -> &BTreeSet<SampleId> {
        &self.test
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.pool.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split_of(&self, id: SampleId) -> Option<Split> {
        if self.train.contains(&id) {
            Some(Split::Train)
        } else if self.pool.contains(&id) {
            Some(Split::Pool)
        } else if self.test.contains(&id) {
            Some(Split::Test)
        } else {
            None
        }
    }

    /// Moves `ids` from pool to train. Fails without modifying anything if
    /// any id is not currently in the pool or repeats.
    pub(crate) fn acquire(&mut self, ids: &[SampleId]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in ids {
            if !self.pool.contains(id) || !seen.insert(*id) {
                return Err(Error::NotInPool(*id));
            }
        }
        for id in ids {
            self.pool.remove(id);
            self.train.insert(*id);
        }
        Ok(())
    }
}

/// Splits a world: a uniformly random test set of `round(test_fraction * n)`
/// units, then the remaining units ranked by the MNAR masking score; the
/// `round(initial_labeled_fraction * n)` lowest-scoring units keep their
/// confounder (train) and the rest are masked (pool).
pub fn partition(
    samples: &[Sample],
    initial_labeled_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<DataPartition> {
    let open = |f: f64| f > 0.0 && f < 1.0;
    if !open(initial_labeled_fraction)
        || !open(test_fraction)
        || initial_labeled_fraction + test_fraction >= 1.0
    {
        return Err(invalid(format!(
            "fractions must lie in (0, 1) with sum < 1 (labeled {initial_labeled_fraction}, test {test_fraction})"
        )));
    }
    let n = samples.len();
    let n_test = libm::round(test_fraction * n as f64) as usize;
    let n_train = libm::round(initial_labeled_fraction * n as f64) as usize;
    if n_test == 0 {
        return Err(Error::EmptySplit("test"));
    }
    if n_train == 0 {
        return Err(Error::EmptySplit("train"));
    }
    if n_test + n_train >= n {
        return Err(Error::EmptySplit("pool"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Stream::TestSplit));
    let test: BTreeSet<SampleId> = order[..n_test].iter().map(|&i| samples[i].id).collect();
    let rest: Vec<&Sample> = order[n_test..].iter().map(|&i| &samples[i]).collect();

    let ranked = simulate::mnar_ranking(&rest, simulate::MaskNoise::Gaussian, seed);
    let n_pool = rest.len() - n_train;
    let pool: BTreeSet<SampleId> = ranked[..n_pool].iter().copied().collect();
    let train: BTreeSet<SampleId> = ranked[n_pool..].iter().copied().collect();
    DataPartition::from_sets(train, pool, test)
}
