//! Summary tables over a set of traces: optimal performance per estimator,
//! samples needed to reach it per strategy, mean curves and pairwise tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cfa_core::acquire::Strategy;
use cfa_core::evaluate::{mean_ci, summarize, AcquisitionTrace, MeanCi, Metric, Summary};

use crate::io::{CsvBuffer, IoError};
use crate::svg;

/// Strategies in their canonical order, then any unknown names sorted.
fn strategy_order(names: impl Iterator<Item = String>) -> Vec<String> {
    let mut names: Vec<String> = names.collect();
    names.sort_by_key(|n| {
        let rank = Strategy::parse(n).map_or(usize::MAX, |s| Strategy::ALL.iter().position(|x| *x == s).unwrap());
        (rank, n.clone())
    });
    names.dedup();
    names
}

fn opt_cell(m: Option<MeanCi>) -> [String; 2] {
    m.map_or([String::new(), String::new()], |m| [m.mean.to_string(), m.half_width.to_string()])
}

/// Mean and 95% half-width of the optimal metrics per estimator, one value
/// per realization.
pub fn optimal_table(traces: &[AcquisitionTrace]) -> CsvBuffer {
    let mut per: BTreeMap<&str, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
    for t in traces {
        if let Some(o) = t.optimal {
            per.entry(&t.estimator).or_default().insert(t.realization, (o.eps_ate, o.sqrt_pehe));
        }
    }
    let mut w = CsvBuffer::new([
        "estimator",
        "eps_ate_mean",
        "eps_ate_ci95",
        "sqrt_pehe_mean",
        "sqrt_pehe_ci95",
        "n_realizations",
    ]);
    for (est, by_real) in per {
        let e: Vec<f64> = by_real.values().map(|v| v.0).collect();
        let p: Vec<f64> = by_real.values().map(|v| v.1).collect();
        let [em, eh] = opt_cell(mean_ci(&e).ok());
        let [pm, ph] = opt_cell(mean_ci(&p).ok());
        w.row([est.to_string(), em, eh, pm, ph, by_real.len().to_string()]);
    }
    w
}

/// One row per `(estimator, metric)`, four columns per strategy: mean
/// samples to reach the optimum, CI half-width, reached count, censored.
pub fn efficiency_table(summary: &Summary) -> CsvBuffer {
    let strategies = strategy_order(summary.efficiency.iter().map(|e| e.strategy.clone()));
    let mut header = vec!["estimator".to_string(), "metric".to_string()];
    for s in &strategies {
        for suffix in ["mean", "ci95", "n", "censored"] {
            header.push(format!("{s}_{suffix}"));
        }
    }
    let mut w = CsvBuffer::new(&header);
    let mut rows: BTreeMap<(String, Metric), BTreeMap<String, [String; 4]>> = BTreeMap::new();
    for e in &summary.efficiency {
        let [m, h] = opt_cell(e.samples);
        let reached = e.samples.map_or(0, |s| s.n);
        rows.entry((e.estimator.clone(), e.metric))
            .or_default()
            .insert(e.strategy.clone(), [m, h, reached.to_string(), e.n_censored.to_string()]);
    }
    for ((est, metric), cells) in rows {
        let mut rec = vec![est, metric.as_str().to_string()];
        for s in &strategies {
            rec.extend(cells.get(s).cloned().unwrap_or_default());
        }
        w.row(&rec);
    }
    w
}

pub fn curves_table(summary: &Summary) -> CsvBuffer {
    let mut w = CsvBuffer::new([
        "strategy",
        "estimator",
        "iteration",
        "n_acquired",
        "eps_ate_mean",
        "eps_ate_ci95",
        "sqrt_pehe_mean",
        "sqrt_pehe_ci95",
        "n_treated",
        "n_control",
    ]);
    for ((strategy, estimator), pts) in &summary.curves {
        for p in pts {
            w.row([
                strategy.clone(),
                estimator.clone(),
                p.iteration.to_string(),
                p.n_acquired.to_string(),
                p.eps_ate.mean.to_string(),
                p.eps_ate.half_width.to_string(),
                p.sqrt_pehe.mean.to_string(),
                p.sqrt_pehe.half_width.to_string(),
                p.n_treated.to_string(),
                p.n_control.to_string(),
            ]);
        }
    }
    w
}

pub fn comparisons_table(summary: &Summary) -> CsvBuffer {
    let mut w = CsvBuffer::new([
        "estimator",
        "metric",
        "better",
        "worse",
        "t",
        "df",
        "p_one_sided",
        "significant",
    ]);
    for c in &summary.comparisons {
        w.row([
            c.estimator.clone(),
            c.metric.as_str().to_string(),
            c.better.clone(),
            c.worse.clone(),
            c.test.t.to_string(),
            c.test.df.to_string(),
            c.test.p_greater.to_string(),
            c.significant.to_string(),
        ]);
    }
    w
}

/// Writes the summary tables (and, if asked, curve plots) into `dir`.
/// Returns the paths written.
pub fn write_reports(
    dir: &Path,
    traces: &[AcquisitionTrace],
    pct: f64,
    render_svg: bool,
) -> Result<Vec<PathBuf>, ReportError> {
    let summary = summarize(traces, pct).map_err(ReportError::Summary)?;
    let mut written = Vec::new();
    let mut save = |name: &str, bytes: Vec<u8>| -> Result<(), ReportError> {
        let p = dir.join(name);
        crate::io::atomic_write(&p, &bytes)?;
        written.push(p);
        Ok(())
    };
    save("summary_optimal.csv", optimal_table(traces).into_bytes())?;
    save("summary.csv", efficiency_table(&summary).into_bytes())?;
    save("curves.csv", curves_table(&summary).into_bytes())?;
    save("comparisons.csv", comparisons_table(&summary).into_bytes())?;
    if render_svg {
        for metric in [Metric::EpsAte, Metric::SqrtPehe] {
            save(
                &format!("curves_{}.svg", metric.as_str()),
                svg::curves(&summary, metric).into_bytes(),
            )?;
        }
        save("arm_counts.svg", svg::arm_counts(&summary).into_bytes())?;
    }
    Ok(written)
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("cannot summarize traces: {0}")]
    Summary(cfa_core::Error),
    #[error(transparent)]
    Io(#[from] IoError),
}
