//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Set `IHDP_COVARIATES` to a covariate CSV (with an
//! `id` column and the IHDP column names) to run the data-dependent checks
//! on real covariates instead of the synthetic stand-in.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cfa::experiment::load_data;
use cfa::{io, run_experiment, ExperimentConfig};
use cfa_core::acquire::mmd::{expected_mmd_after_add, mmd, KernelSpec, KernelSums, Rbf};
use cfa_core::acquire::{cb_scores, train_kernel_sums};
use cfa_core::data::{self, mean_sd, synthesize_covariates, ColumnKind, SampleId, Unit};
use cfa_core::estimators::gp::{GaussianProcess, GpParams};
use cfa_core::estimators::*;
use cfa_core::evaluate::*;
use cfa_core::rng::{indexed_stream, stream, Stream};
use cfa_core::runner::{pool_units, train_units};
use cfa_core::simulate::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

type Check = Result<(bool, String), String>;

struct Line {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn run(id: usize, title: &'static str, budget: Option<Duration>, f: impl FnOnce() -> Check) -> Line {
    let start = Instant::now();
    let (mut pass, mut detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let elapsed = start.elapsed();
    if let Some(b) = budget {
        if elapsed > b {
            pass = false;
            detail.push_str(&format!("; over the {:.0} s budget", b.as_secs_f64()));
        }
    }
    let line = Line {
        id,
        title,
        pass,
        detail,
        elapsed,
    };
    print_line(&line);
    line
}

fn print_line(l: &Line) {
    println!(
        "{} {:>2} {}: {} ({:.1} s)",
        if l.pass { "PASS" } else { "FAIL" },
        l.id,
        l.title,
        l.detail,
        l.elapsed.as_secs_f64()
    );
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- fixtures

struct Rows {
    x: Vec<Vec<f64>>,
    a: Vec<bool>,
    t: Vec<bool>,
    y: Vec<f64>,
}

impl Rows {
    fn units(&self) -> Vec<Unit<'_>> {
        (0..self.y.len())
            .map(|i| Unit {
                id: SampleId(i as u32),
                x: &self.x[i],
                a: Some(self.a[i]),
                t: self.t[i],
                y: self.y[i],
            })
            .collect()
    }
}

/// `x ~ N(0, I_3)`, `t ~ Bernoulli(sigmoid(0.6 x0 - 0.4 x1))`,
/// `y = 2 t + w·x + 0.1 e`. Treated units have larger `x0`, so the raw
/// difference of arm means is biased upward.
fn linear_world(n: usize, seed: u64) -> Rows {
    let w = [0.5, -0.3, 0.8];
    let mut rng = indexed_stream(seed, Stream::Covariates, 7);
    let mut rows = Rows {
        x: Vec::new(),
        a: Vec::new(),
        t: Vec::new(),
        y: Vec::new(),
    };
    for _ in 0..n {
        let x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let lp = 0.6 * x[0] - 0.4 * x[1];
        let t = rng.random_bool(1.0 / (1.0 + (-lp).exp()));
        let e: f64 = StandardNormal.sample(&mut rng);
        let y = 2.0 * t as u8 as f64 + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.1 * e;
        rows.a.push(rng.random_bool(0.5));
        rows.x.push(x);
        rows.t.push(t);
        rows.y.push(y);
    }
    rows
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    cov / (sa * sb)
}

fn refs(s: &[Vec<f64>]) -> Vec<&[f64]> {
    s.iter().map(|p| p.as_slice()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ------------------------------------------------------------ experiments

const IHDP_ENV: &str = "IHDP_COVARIATES";
const SYNTHETIC_N: usize = 747;
const DATA_SEED: u64 = 2024;

fn ihdp_path() -> Option<PathBuf> {
    std::env::var_os(IHDP_ENV).map(PathBuf::from)
}

/// Kinds for the columns of the supplied file, taken from the IHDP names.
fn file_source(path: &Path) -> Result<Value, String> {
    let known: BTreeMap<String, ColumnKind> = data::ihdp_like_columns()
        .iter()
        .map(|c| {
            let kind = match c {
                data::ColumnDistribution::Normal { .. } => ColumnKind::Continuous,
                data::ColumnDistribution::Bernoulli { .. } => ColumnKind::Binary,
            };
            (c.name().to_string(), kind)
        })
        .collect();
    let mut rdr = csv::Reader::from_path(path).map_err(err)?;
    let mut columns = serde_json::Map::new();
    for h in rdr.headers().map_err(err)?.iter().filter(|h| *h != "id") {
        let kind = known
            .get(h)
            .ok_or_else(|| format!("{}: unexpected column `{h}`", path.display()))?;
        columns.insert(h.to_string(), serde_json::to_value(kind).map_err(err)?);
    }
    Ok(json!({"source": "file", "path": path, "columns": columns}))
}

fn data_source() -> Result<Value, String> {
    match ihdp_path() {
        Some(p) => file_source(&p),
        None => Ok(json!({"source": "synthetic", "n": SYNTHETIC_N, "seed": DATA_SEED})),
    }
}

fn data_label() -> &'static str {
    if ihdp_path().is_some() {
        "IHDP covariates"
    } else {
        "synthetic IHDP-like covariates"
    }
}

fn config(dir: &Path, doc: Value) -> Result<ExperimentConfig, String> {
    let mut doc = doc;
    doc["output_dir"] = json!(dir);
    doc["workers"] = json!(std::env::var("CFA_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())));
    serde_json::from_value(doc).map_err(err)
}

fn experiment(cfg: &ExperimentConfig) -> Result<Vec<AcquisitionTrace>, String> {
    run_experiment(cfg).map_err(err)?;
    let dir = &cfg.output_dir;
    let traces = io::read_traces(&dir.join("traces.csv"), &dir.join("trace_index.csv")).map_err(err)?;
    if let Some(f) = traces.iter().find_map(|t| t.failure.clone()) {
        return Err(format!("a trace failed: {f}"));
    }
    Ok(traces)
}

/// Samples to within `pct` of the optimal `eps_ate`, by realization, for one
/// strategy.
fn samples_needed(traces: &[AcquisitionTrace], strategy: &str) -> Result<BTreeMap<usize, f64>, String> {
    traces
        .iter()
        .filter(|t| t.strategy == strategy)
        .map(|t| {
            let opt = t.optimal.ok_or("missing optimal reference")?;
            samples_to_within(&t.records, Metric::EpsAte, opt.eps_ate, 0.01)
                .count()
                .map(|c| (t.realization, c as f64))
                .ok_or_else(|| format!("realization {} {strategy} never reached the optimum", t.realization))
        })
        .collect()
}

fn paired(a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, f64>) -> (Vec<f64>, Vec<f64>) {
    a.iter().filter_map(|(k, v)| b.get(k).map(|w| (*v, *w))).unzip()
}

// ------------------------------------------------------------- criteria

fn c1_mmd() -> Check {
    let mut notes = Vec::new();
    let mut ok = true;

    let unit = Rbf::new(1.0).map_err(err)?;
    let single = mmd(&[&[0.0]], &[&[1.0]], &unit).map_err(err)?;
    let closed = (2.0 - 2.0 * (-0.5f64).exp()).sqrt();
    ok &= (single - closed).abs() < 1e-10 && (single - 0.8871).abs() < 1e-4;
    notes.push(format!("singleton {single:.10}"));

    let mut rng = stream(101, Stream::Selection);
    let mut worst_sym = 0.0f64;
    for _ in 0..500 {
        let dim = rng.random_range(1..5);
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect()
        };
        let (nu, nv) = (1 + (dim * 3) % 7, 1 + dim % 5);
        let (u, v) = (draw(nu), draw(nv));
        let k = Rbf::new(0.3 + dim as f64 * 0.4).map_err(err)?;
        let r = refs;
        let uv = mmd(&r(&u), &r(&v), &k).map_err(err)?;
        let vu = mmd(&r(&v), &r(&u), &k).map_err(err)?;
        ok &= uv >= 0.0 && mmd(&r(&u), &r(&u), &k).map_err(err)? == 0.0;
        worst_sym = worst_sym.max((uv - vu).abs());
    }
    ok &= worst_sym < 1e-10;
    notes.push(format!("500 random pairs, max asymmetry {worst_sym:.1e}"));

    // A 50-step greedy balancing run on a simulated world, revealing the true
    // confounder of each acquired unit.
    let table = synthesize_covariates(300, &data::ihdp_like_columns(), 5).map_err(err)?;
    let r = simulate(&table, &SimulationConfig::default(), 5).map_err(err)?;
    let train = train_units(&r.world, &r.partition);
    let mut pool = pool_units(&r.world, &r.partition);
    let spec = KernelSpec::default();
    let mut sums = train_kernel_sums(&train, &spec).map_err(err)?;
    let truth: BTreeMap<SampleId, bool> = r.world.truth_rows().map(|t| (t.id, t.a)).collect();
    let model = AttributeModel::Constant(0.5);
    let mut worst = 0.0f64;
    for step in 0..50 {
        let best = cb_scores(&pool, &sums, &model, step).map_err(err)?[0].id;
        let pos = pool.iter().position(|u| u.id == best).ok_or("selected id not in pool")?;
        let u = pool.remove(pos);
        let a = truth[&u.id];
        sums.add(u.t, u.features_with(a), 1.0);
        worst = worst.max((sums.mmd().map_err(err)? - sums.mmd_from_scratch().map_err(err)?).abs());
    }
    ok &= worst < 1e-10;
    notes.push(format!("50-step run, max cached drift {worst:.1e}"));
    Ok((ok, notes.join("; ")))
}

fn c2_expected_mmd() -> Check {
    let mut rng = stream(202, Stream::Selection);
    let rows = Rows {
        x: (0..30).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect(),
        a: (0..30).map(|_| rng.random_bool(0.5)).collect(),
        t: (0..30).map(|i| i % 3 != 0).collect(),
        y: vec![0.0; 30],
    };
    let units = rows.units();
    let (train, pool) = units.split_at(10);
    let bw = 1.2;
    let k = Rbf::new(bw).map_err(err)?;
    let mut sums = KernelSums::new(k.clone());
    for u in train {
        sums.add(u.t, u.features_with(u.a.unwrap()), 1.0);
    }
    let arm = |treated: bool, extra: Option<Vec<f64>>| -> Vec<Vec<f64>> {
        let mut v: Vec<Vec<f64>> = train
            .iter()
            .filter(|u| u.t == treated)
            .map(|u| u.features_with(u.a.unwrap()))
            .collect();
        v.extend(extra);
        v
    };
    let mut worst = 0.0f64;
    for (i, c) in pool.iter().enumerate() {
        let p = (i as f64 + 0.5) / pool.len() as f64;
        let branch = |a: bool| -> Result<f64, String> {
            let point = c.features_with(a);
            let tr = arm(true, c.t.then(|| point.clone()));
            let co = arm(false, (!c.t).then(|| point.clone()));
            mmd(&refs(&tr), &refs(&co), &k).map_err(err)
        };
        let brute = p * branch(true)? + (1.0 - p) * branch(false)?;
        let fast = expected_mmd_after_add(c.x, c.t, p, &sums).map_err(err)?;
        worst = worst.max((fast - brute).abs());
    }
    Ok((worst <= 1e-12, format!("20 candidates, max difference {worst:.1e}")))
}

fn c3_simulation() -> Check {
    let mut notes = Vec::new();
    let mut ok = true;

    let table = synthesize_covariates(1000, &data::ihdp_like_columns(), 3).map_err(err)?;
    let r = simulate(&table, &SimulationConfig::default(), 3).map_err(err)?;
    let samples = r.world.samples();
    let mut count_ok = true;
    for n in 1..=samples.len() {
        let m = apply_mnar_mask(&samples[..n], 0.95, n as u64).map_err(err)?;
        count_ok &= m.len() == (0.95 * n as f64).ceil() as usize;
    }
    // The default split masks 95% of the non-test units.
    let r747 = simulate(
        &synthesize_covariates(747, &data::ihdp_like_columns(), 3).map_err(err)?,
        &SimulationConfig::default(),
        3,
    )
    .map_err(err)?;
    let non_test = 747 - r747.partition.test().len();
    count_ok &= r747.partition.pool().len() == (0.95 * non_test as f64).ceil() as usize;
    ok &= count_ok;
    notes.push(format!(
        "masked counts exact for n = 1..1000 (n = 747 split: {} of {non_test})",
        r747.partition.pool().len()
    ));

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for seed in 0..20 {
        let t = synthesize_covariates(747, &data::ihdp_like_columns(), seed).map_err(err)?;
        let (t, _) = data::normalize(&t).map_err(err)?;
        let cols: Vec<String> = t.columns().iter().map(|c| c.name.clone()).collect();
        for xi_max in [0.2, 3.0] {
            let params = TreatmentParams::drawn(cols.clone(), xi_max, seed).map_err(err)?;
            for p in treatment_probabilities(&t, &params).map_err(err)? {
                lo = lo.min(p);
                hi = hi.max(p);
            }
        }
    }
    ok &= lo >= CLIP_LO && hi <= CLIP_HI;
    notes.push(format!("treatment probabilities in [{lo}, {hi}]"));

    ok &= mnar_score(false, 0.0) == 0.4 && mnar_score(true, 0.0) == 0.2;
    let a_of: BTreeMap<SampleId, bool> = r.world.truth_rows().map(|t| (t.id, t.a)).collect();
    let n_a0 = a_of.values().filter(|a| !**a).count();
    let mut order_ok = true;
    for frac in [0.1, 0.3, 0.5, 0.7, 0.95] {
        let m = apply_mnar_mask_with(samples, frac, MaskNoise::Disabled, 9).map_err(err)?;
        let a1 = m.iter().filter(|id| a_of[id]).count();
        order_ok &= a1 == 0 || m.len() - a1 == n_a0;
    }
    ok &= order_ok;
    notes.push(format!("noise-free masking takes A=0 first: {order_ok}"));

    let big = synthesize_covariates(20000, &data::ihdp_like_columns(), 4).map_err(err)?;
    let a_idx = big.column_index("momwhite").map_err(err)?;
    let ones = big.column_values(a_idx).iter().filter(|v| **v == 1.0).count() as f64;
    let mut corrs = Vec::new();
    for rho in [0.0, 0.4, 0.8] {
        let v = AVariant::BivariateGaussian {
            rho,
            birthweight_column: "bw".into(),
        };
        let d = apply_a_variant(&big, "momwhite", &v, 4).map_err(err)?;
        let z = d.latent.ok_or("no latent")?;
        let (_, b) = d.birthweight.ok_or("no birthweight")?;
        let c = corr(&z, &b);
        let got = d.a.iter().filter(|v| **v == 1.0).count() as f64;
        ok &= (c - rho).abs() < 0.03 && (got - ones).abs() <= 1.0;
        corrs.push(format!("{c:.3}"));
    }
    notes.push(format!("bivariate corr {} for rho 0/0.4/0.8", corrs.join("/")));
    Ok((ok, notes.join("; ")))
}

fn c4_estimators() -> Check {
    let mut notes = Vec::new();
    let mut ok = true;

    let (mut plug, mut corr_) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let w = linear_world(2000, seed);
        let units = w.units();
        let m = DoublyRobust::fit(&units, &DrParams::default(), seed).map_err(err)?;
        plug.push(estimate_ate(&m, &units, AteMode::PlugIn).map_err(err)?);
        corr_.push(estimate_ate(&m, &units, AteMode::Corrected).map_err(err)?);
    }
    let (p, c) = (mean(&plug), mean(&corr_));
    ok &= (p - 2.0).abs() <= 0.1 && (c - 2.0).abs() <= 0.1;
    notes.push(format!("tau over 20 seeds: plug-in {p:.3}, corrected {c:.3}"));

    let w = linear_world(5000, 99);
    let units = w.units();
    let treated: Vec<f64> = units.iter().filter(|u| u.t).map(|u| u.y).collect();
    let control: Vec<f64> = units.iter().filter(|u| !u.t).map(|u| u.y).collect();
    let naive = mean(&treated) - mean(&control);
    let arms = [
        ("bad outcome", HeadKind::Constant, HeadKind::Network),
        ("bad propensity", HeadKind::Network, HeadKind::Constant),
    ];
    for (name, outcome_head, propensity_head) in arms {
        let params = DrParams {
            outcome_head,
            propensity_head,
            ..DrParams::default()
        };
        let m = DoublyRobust::fit(&units, &params, 99).map_err(err)?;
        let est = estimate_ate(&m, &units, AteMode::Corrected).map_err(err)?;
        ok &= (est - 2.0).abs() <= 0.1;
        notes.push(format!("{name} {est:.3}"));
    }
    notes.push(format!("raw arm difference {naive:.3}"));

    let x: Vec<f64> = (0..50).map(|i| i as f64 * 2.0 * std::f64::consts::PI / 49.0).collect();
    let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
    let gp = GaussianProcess::fit(&x, 1, &y, &GpParams::default()).map_err(err)?;
    let rmse = (x.iter().zip(&y).map(|(a, b)| (gp.predict(&[*a]) - b).powi(2)).sum::<f64>() / 50.0).sqrt();
    ok &= rmse < 0.05;
    notes.push(format!("GP sin RMSE {rmse:.1e}"));

    // Rescaling control outcomes must leave every treated-head prediction
    // bit-identical.
    let w = linear_world(120, 5);
    let moved = Rows {
        x: w.x.clone(),
        a: w.a.clone(),
        t: w.t.clone(),
        y: w.y.iter().zip(&w.t).map(|(y, t)| if *t { *y } else { 3.0 * y - 7.0 }).collect(),
    };
    let specs = [
        EstimatorSpec::Dr(DrParams {
            epochs: 100,
            ..DrParams::default()
        }),
        EstimatorSpec::GpMulti(GpParams::default()),
        EstimatorSpec::MlpMulti(MlpParams {
            epochs: 50,
            ..MlpParams::default()
        }),
    ];
    let mut isolated = true;
    for spec in &specs {
        let a = spec.fit(&w.units(), 5).map_err(err)?;
        let b = spec.fit(&moved.units(), 5).map_err(err)?;
        for u in w.units().iter().take(40) {
            for arm in [false, true] {
                isolated &= a.potential_outcomes(u.x, arm).1.to_bits() == b.potential_outcomes(u.x, arm).1.to_bits();
            }
        }
    }
    ok &= isolated;
    notes.push(format!("arm isolation exact for dr, gp, mlp: {isolated}"));
    Ok((ok, notes.join("; ")))
}

fn c5_metrics(all_traces: &[AcquisitionTrace]) -> Check {
    let mut ok = true;
    let mut notes = Vec::new();
    let predicted = [(0.0, 1.0), (1.0, 4.0)];
    let truth = [(1.0, 1.0), (0.0, 2.0)];
    // Predicted effects [1, 3], true [0, 2]: ATE error 1, PEHE 1.
    ok &= eps_ate(&predicted, &truth).map_err(err)? == 1.0 && pehe(&predicted, &truth).map_err(err)? == 1.0;
    let mixed = [(0.0, 2.0), (0.0, 0.0)];
    // Predicted effects [2, 0], true [0, 2]: ATE error 0, PEHE 4.
    ok &= eps_ate(&mixed, &truth).map_err(err)? == 0.0 && pehe(&mixed, &truth).map_err(err)? == 4.0;
    notes.push("2-sample fixtures match".to_string());

    let mut n_records = 0;
    let mut violations = 0;
    for t in all_traces {
        for r in &t.records {
            n_records += 1;
            violations += (r.pehe + 1e-12 < r.eps_ate * r.eps_ate) as usize;
        }
    }
    ok &= violations == 0 && n_records > 0;
    notes.push(format!("PEHE >= eps^2 on {n_records} records, {violations} violations"));

    let rec = |i: usize, e: f64| MetricsRecord {
        iteration: i,
        n_acquired: 10 * i,
        eps_ate: e,
        pehe: e * e,
        sqrt_pehe: e,
        n_treated_acquired: 0,
        n_control_acquired: 10 * i,
    };
    let walk = [rec(0, 2.0), rec(1, 1.2), rec(2, 1.005), rec(3, 1.0)];
    let hand = [
        (1.0, 0.01, Reach::At(20)),
        (1.0, 0.25, Reach::At(10)),
        (1.0, 0.0, Reach::At(30)),
        (2.0, 0.0, Reach::At(0)),
        (0.5, 0.01, Reach::Censored),
    ];
    for (opt, pct, want) in hand {
        ok &= samples_to_within(&walk, Metric::EpsAte, opt, pct) == want;
    }
    notes.push("threshold walks match".to_string());
    Ok((ok, notes.join("; ")))
}

fn c6_fewer_samples(dir: &Path, keep: &mut Vec<AcquisitionTrace>, optima: &mut Vec<f64>) -> Check {
    let cfg = config(
        dir,
        json!({
            "data": data_source()?,
            "estimators": [{"kind": "dr"}],
            "strategies": ["random", "oe"],
            "loop": {"batch_size": 10, "stop_within": 0.01},
            "n_realizations": 50,
            "base_seed": 1000,
        }),
    )?;
    let traces = experiment(&cfg)?;
    let (oe, random) = paired(&samples_needed(&traces, "oe")?, &samples_needed(&traces, "random")?);
    if oe.len() < 50 {
        return Err(format!("only {} paired realizations", oe.len()));
    }
    let welch = welch_t_test(&random, &oe).map_err(err)?;
    let pair = paired_t_test(&random, &oe).map_err(err)?;
    let (mo, mr) = (mean(&oe), mean(&random));
    let reduction = 1.0 - mo / mr;
    let ci = |v: &[f64]| mean_ci(v).map(|c| c.half_width).unwrap_or(f64::NAN);
    optima.extend(traces.iter().filter(|t| t.strategy == "oe").filter_map(|t| t.optimal.map(|o| o.eps_ate)));
    keep.extend(traces);
    Ok((
        mo < mr && welch.p_greater < 0.05 && reduction >= 0.2,
        format!(
            "{} realizations on {}: OE {mo:.1} ± {:.1} vs Random {mr:.1} ± {:.1} samples, reduction {:.0}%, one-sided Welch p = {:.2e} (paired p = {:.2e})",
            oe.len(),
            data_label(),
            ci(&oe),
            ci(&random),
            100.0 * reduction,
            welch.p_greater,
            pair.p_greater
        ),
    ))
}

fn c7_early_control(dir: &Path, keep: &mut Vec<AcquisitionTrace>) -> Check {
    let beta = 10;
    let mut cfg = config(
        dir,
        json!({
            "data": data_source()?,
            "estimators": [{"kind": "dr"}],
            "strategies": ["oe", "cb"],
            "loop": {"batch_size": beta},
            "n_realizations": 50,
            "base_seed": 3000,
        }),
    )?;
    let raw = load_data(&cfg).map_err(err)?;
    let r = simulate(&raw, &cfg.simulation, cfg.base_seed).map_err(err)?;
    let pool = r.partition.pool().len();
    let iterations = (pool / 5) / beta;
    cfg.acquisition.max_iterations = Some(iterations);
    let traces = experiment(&cfg)?;
    let fraction = |s: &str| -> BTreeMap<usize, f64> {
        traces
            .iter()
            .filter(|t| t.strategy == s)
            .filter_map(|t| {
                let last = t.records.last()?;
                (last.n_acquired > 0).then(|| (t.realization, last.n_control_acquired as f64 / last.n_acquired as f64))
            })
            .collect()
    };
    let (oe, cb) = paired(&fraction("oe"), &fraction("cb"));
    if oe.len() < 50 {
        return Err(format!("only {} paired realizations", oe.len()));
    }
    let test = paired_t_test(&oe, &cb).map_err(err)?;
    keep.extend(traces);
    Ok((
        mean(&oe) > mean(&cb) && test.p_greater < 0.05,
        format!(
            "first {} of {pool} pool units over {} realizations: control fraction OE {:.3} vs CB {:.3}, paired one-sided p = {:.2e}",
            iterations * beta,
            oe.len(),
            mean(&oe),
            mean(&cb),
            test.p_greater
        ),
    ))
}

fn c8_correlation(dir: &Path, keep: &mut Vec<AcquisitionTrace>) -> Check {
    let mut ok = true;
    let mut notes = Vec::new();
    for (i, rho) in [0.0, 0.4, 0.8].into_iter().enumerate() {
        let cfg = config(
            &dir.join(format!("rho{i}")),
            json!({
                "data": data_source()?,
                "simulation": {"a_variant": {"mode": "bivariate_gaussian", "rho": rho}},
                "estimators": [{"kind": "dr"}],
                "strategies": ["random", "oe"],
                "loop": {"batch_size": 10, "stop_within": 0.01},
                "n_realizations": 30,
                "base_seed": 5000 + 100 * i as u64,
            }),
        )?;
        let traces = experiment(&cfg)?;
        let (oe, random) = paired(&samples_needed(&traces, "oe")?, &samples_needed(&traces, "random")?);
        if oe.len() < 30 {
            return Err(format!("rho {rho}: only {} paired realizations", oe.len()));
        }
        ok &= mean(&oe) <= mean(&random);
        notes.push(format!("rho {rho}: OE {:.1} vs Random {:.1}", mean(&oe), mean(&random)));
        keep.extend(traces);
    }
    Ok((ok, format!("30 realizations per level; {}", notes.join(", "))))
}

fn c9_sanity_band(dir: &Path, synthetic_optima: &[f64]) -> Check {
    let optima: Vec<f64> = match ihdp_path() {
        Some(p) => {
            let cfg = config(
                dir,
                json!({
                    "data": file_source(&p)?,
                    "estimators": [{"kind": "dr"}],
                    "strategies": ["random"],
                    "loop": {"max_iterations": 0},
                    "n_realizations": 20,
                    "base_seed": 7000,
                }),
            )?;
            experiment(&cfg)?
                .iter()
                .filter_map(|t| t.optimal.map(|o| o.eps_ate))
                .collect()
        }
        None => synthetic_optima.to_vec(),
    };
    if optima.is_empty() {
        return Err("no optimal references".into());
    }
    let m = mean(&optima);
    let source = if ihdp_path().is_some() {
        "IHDP covariates".to_string()
    } else {
        format!("synthetic stand-in, real-data check not run ({IHDP_ENV} unset)")
    };
    Ok((
        m > 0.1 && m < 3.0,
        format!("mean optimal eps_ate {m:.3} over {} realizations [{source}]", optima.len()),
    ))
}

fn c10_determinism(dir: &Path) -> Check {
    let cfg_path = dir.join("config.json");
    let doc = json!({
        "data": {"source": "synthetic", "n": 300, "seed": 8},
        "estimators": [{"kind": "dr", "hidden": 8, "epochs": 60}],
        "strategies": ["random", "uncertainty", "oe", "cb"],
        "loop": {"batch_size": 12},
        "n_realizations": 3,
    });
    std::fs::write(&cfg_path, serde_json::to_vec_pretty(&doc).map_err(err)?).map_err(err)?;
    let mut outputs = Vec::new();
    for (k, workers) in ["1", "3"].iter().enumerate() {
        let out = dir.join(format!("run{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_cfa"))
            .args(["run", "--config"])
            .arg(&cfg_path)
            .args(["--seed", "42", "--workers", workers, "--output-dir"])
            .arg(&out)
            .output()
            .map_err(err)?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        outputs.push(std::fs::read(out.join("traces.csv")).map_err(err)?);
    }
    let same = outputs[0] == outputs[1];
    Ok((
        same && !outputs[0].is_empty(),
        format!("two runs (1 and 3 workers), traces.csv {} bytes each, identical: {same}", outputs[0].len()),
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let d = |name: &str| tmp.path().join(name);
    let mut traces = Vec::new();
    let mut optima = Vec::new();

    let mut lines = vec![
        run(1, "MMD properties", secs(10), c1_mmd),
        run(2, "expected MMD exactness", secs(5), c2_expected_mmd),
        run(3, "simulation conformance", secs(30), c3_simulation),
        run(4, "estimator oracles", secs(300), c4_estimators),
        run(6, "OE needs fewer samples than Random", secs(1800), || {
            c6_fewer_samples(&d("c6"), &mut traces, &mut optima)
        }),
        run(7, "OE queries more controls early than CB", None, || {
            c7_early_control(&d("c7"), &mut traces)
        }),
        run(8, "OE <= Random at every correlation level", None, || {
            c8_correlation(&d("c8"), &mut traces)
        }),
        run(9, "optimal eps_ate sanity band", None, || c9_sanity_band(&d("c9"), &optima)),
        run(10, "end-to-end determinism", None, || c10_determinism(tmp.path())),
    ];
    lines.push(run(5, "metric oracles", None, || c5_metrics(&traces)));
    lines.sort_by_key(|l| l.id);

    println!("\nsummary");
    for l in &lines {
        print_line(l);
    }
    let failed = lines.iter().filter(|l| !l.pass).count();
    println!("{} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
