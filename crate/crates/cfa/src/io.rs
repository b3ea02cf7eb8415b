//! File formats: covariate and partial-dataset input, CSV outputs, and
//! atomic writes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use cfa_core::data::{Column, ColumnKind, CovariateTable, DataPartition, SampleId, Split, World};
use cfa_core::evaluate::{AcquisitionTrace, MetricsRecord, OptimalReference, PcaPoint};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}, line {line}, column `{column}`: {reason}")]
    Cell {
        path: PathBuf,
        line: usize,
        column: String,
        reason: String,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

fn format_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary file in the target directory, then renames
/// it into place, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let io = |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// CSV rows built in memory and written atomically.
pub struct CsvBuffer {
    inner: csv::Writer<Vec<u8>>,
}

impl CsvBuffer {
    pub fn new<I, S>(header: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let mut inner = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        inner.write_record(header).expect("writing to memory");
        CsvBuffer { inner }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).expect("writing to memory");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.inner.into_inner().expect("flushing to memory")
    }

    pub fn save(self, path: &Path) -> Result<(), IoError> {
        atomic_write(path, &self.into_bytes())
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, IoError> {
    let file = std::fs::File::open(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Loads a covariate CSV: an `id` column plus numeric columns, each of
/// whose kind must be given in `kinds`.
pub fn load_covariates(path: &Path, kinds: &BTreeMap<String, ColumnKind>) -> Result<CovariateTable, IoError> {
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| format_err(path, "no `id` column"))?;
    let mut columns = Vec::new();
    let mut positions = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if i == id_col {
            continue;
        }
        let kind = kinds
            .get(h)
            .ok_or_else(|| format_err(path, format!("no kind configured for column `{h}`")))?;
        columns.push(Column::new(h, *kind));
        positions.push(i);
    }
    for name in kinds.keys() {
        if !headers.iter().any(|h| h == name) {
            return Err(format_err(path, format!("configured column `{name}` is not in the file")));
        }
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = r + 2;
        ids.push(rec[id_col].to_string());
        for (c, &p) in positions.iter().enumerate() {
            let cell = &rec[p];
            let v: f64 = cell.parse().map_err(|_| IoError::Cell {
                path: path.to_path_buf(),
                line,
                column: columns[c].name.clone(),
                reason: if cell.is_empty() {
                    "missing value".to_string()
                } else {
                    format!("`{cell}` is not a number")
                },
            })?;
            values.push(v);
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for (r, id) in ids.iter().enumerate() {
        if !seen.insert(id) {
            return Err(IoError::Cell {
                path: path.to_path_buf(),
                line: r + 2,
                column: "id".into(),
                reason: format!("duplicate id `{id}`"),
            });
        }
    }
    CovariateTable::new(columns, ids, values).map_err(|e| match e {
        cfa_core::Error::Cell { row, column, reason } => IoError::Cell {
            path: path.to_path_buf(),
            line: row + 2,
            column,
            reason,
        },
        other => format_err(path, other.to_string()),
    })
}

/// A dataset given to `score`: covariates, treatment `t`, outcome `y`, and
/// the confounder column, blank where it has not been acquired.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialDataset {
    pub ids: Vec<String>,
    pub feature_names: Vec<String>,
    /// Row-major, `feature_names.len()` wide.
    pub x: Vec<f64>,
    pub a: Vec<Option<bool>>,
    pub t: Vec<bool>,
    pub y: Vec<f64>,
}

fn parse_flag(path: &Path, line: usize, column: &str, cell: &str) -> Result<bool, IoError> {
    match cell {
        "1" | "1.0" | "true" => Ok(true),
        "0" | "0.0" | "false" => Ok(false),
        _ => Err(IoError::Cell {
            path: path.to_path_buf(),
            line,
            column: column.to_string(),
            reason: format!("`{cell}` is not 0 or 1"),
        }),
    }
}

fn parse_number(path: &Path, line: usize, column: &str, cell: &str) -> Result<f64, IoError> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(IoError::Cell {
            path: path.to_path_buf(),
            line,
            column: column.to_string(),
            reason: format!("`{cell}` is not a finite number"),
        }),
    }
}

pub fn load_partial_dataset(path: &Path, confounder: &str) -> Result<PartialDataset, IoError> {
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(path, format!("no `{name}` column")))
    };
    let (id_col, t_col, y_col, a_col) = (find("id")?, find("t")?, find("y")?, find(confounder)?);
    let features: Vec<usize> = (0..headers.len())
        .filter(|i| ![id_col, t_col, y_col, a_col].contains(i))
        .collect();
    let mut d = PartialDataset {
        ids: Vec::new(),
        feature_names: features.iter().map(|&i| headers[i].to_string()).collect(),
        x: Vec::new(),
        a: Vec::new(),
        t: Vec::new(),
        y: Vec::new(),
    };
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = r + 2;
        d.ids.push(rec[id_col].to_string());
        for &f in &features {
            d.x.push(parse_number(path, line, &headers[f], &rec[f])?);
        }
        d.t.push(parse_flag(path, line, "t", &rec[t_col])?);
        d.y.push(parse_number(path, line, "y", &rec[y_col])?);
        let a = &rec[a_col];
        d.a.push(if a.is_empty() {
            None
        } else {
            Some(parse_flag(path, line, confounder, a)?)
        });
    }
    if d.ids.is_empty() {
        return Err(format_err(path, "no rows"));
    }
    Ok(d)
}

/// Externally supplied model outputs per id: `p(A = 1 | x, t)`,
/// `ŷ(x, 1, t)` and `ŷ(x, 0, t)`.
pub fn load_predictions(path: &Path) -> Result<BTreeMap<String, (f64, f64, f64)>, IoError> {
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(path, format!("no `{name}` column")))
    };
    let cols = [find("id")?, find("p_a1")?, find("yhat_a1")?, find("yhat_a0")?];
    let mut out = BTreeMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = r + 2;
        let num = |c: usize| parse_number(path, line, &headers[c], &rec[c]);
        let p = num(cols[1])?;
        if !(0.0..=1.0).contains(&p) {
            return Err(IoError::Cell {
                path: path.to_path_buf(),
                line,
                column: "p_a1".into(),
                reason: format!("{p} is not a probability"),
            });
        }
        out.insert(rec[cols[0]].to_string(), (p, num(cols[2])?, num(cols[3])?));
    }
    Ok(out)
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn arm(treated: bool) -> &'static str {
    if treated {
        "treated"
    } else {
        "control"
    }
}

/// `id, split, a_observed_present`. Test units count as observed: the
/// evaluator predicts on them with their confounder value.
pub fn partition_csv(world: &World, partition: &DataPartition) -> CsvBuffer {
    let mut w = CsvBuffer::new(["id", "split", "a_observed_present"]);
    for s in world.samples() {
        let split = partition.split_of(s.id()).expect("every sample is in the partition");
        w.row([
            world.label(s.id()),
            split.as_str(),
            flag(split != Split::Pool),
        ]);
    }
    w
}

/// The learner's view of a simulated world: normalized covariates, the
/// confounder (blank unless observed), treatment and factual outcome.
pub fn world_csv(world: &World, partition: &DataPartition) -> CsvBuffer {
    let mut header = vec!["id".to_string()];
    header.extend(world.feature_names.iter().cloned());
    header.extend([world.confounder_name.clone(), "t".into(), "y".into()]);
    let mut w = CsvBuffer::new(&header);
    for row in world.truth_rows() {
        let mut rec = vec![row.label.to_string()];
        rec.extend(row.x.iter().map(|v| v.to_string()));
        let observed = partition.split_of(row.id) != Some(Split::Pool);
        rec.push(if observed { flag(row.a).to_string() } else { String::new() });
        rec.push(flag(row.t).to_string());
        rec.push(row.y.to_string());
        w.row(&rec);
    }
    w
}

/// Ground truth of a simulated world.
pub fn truth_csv(world: &World) -> CsvBuffer {
    let mut w = CsvBuffer::new(["id", "a", "t", "y0", "y1"]);
    for row in world.truth_rows() {
        w.row([
            row.label.to_string(),
            flag(row.a).to_string(),
            flag(row.t).to_string(),
            row.y0.to_string(),
            row.y1.to_string(),
        ]);
    }
    w
}

pub const TRACE_HEADER: [&str; 10] = [
    "realization",
    "strategy",
    "estimator",
    "iteration",
    "n_acquired",
    "eps_ate",
    "pehe",
    "sqrt_pehe",
    "n_treated",
    "n_control",
];

pub fn traces_csv(traces: &[AcquisitionTrace]) -> CsvBuffer {
    let mut w = CsvBuffer::new(TRACE_HEADER);
    for t in traces {
        for r in &t.records {
            w.row([
                t.realization.to_string(),
                t.strategy.clone(),
                t.estimator.clone(),
                r.iteration.to_string(),
                r.n_acquired.to_string(),
                r.eps_ate.to_string(),
                r.pehe.to_string(),
                r.sqrt_pehe.to_string(),
                r.n_treated_acquired.to_string(),
                r.n_control_acquired.to_string(),
            ]);
        }
    }
    w
}

/// One row per trace: seed, optimal reference and failure message, which
/// the trace CSV does not carry.
pub fn trace_index_csv(traces: &[AcquisitionTrace]) -> CsvBuffer {
    let mut w = CsvBuffer::new([
        "realization",
        "seed",
        "strategy",
        "estimator",
        "optimal_eps_ate",
        "optimal_sqrt_pehe",
        "failure",
    ]);
    for t in traces {
        let (e, p) = t
            .optimal
            .map_or((String::new(), String::new()), |o| (o.eps_ate.to_string(), o.sqrt_pehe.to_string()));
        w.row([
            t.realization.to_string(),
            t.seed.to_string(),
            t.strategy.clone(),
            t.estimator.clone(),
            e,
            p,
            t.failure.clone().unwrap_or_default(),
        ]);
    }
    w
}

pub fn acquired_csv(traces: &[AcquisitionTrace], world_labels: impl Fn(usize, SampleId) -> String) -> CsvBuffer {
    let mut w = CsvBuffer::new(["realization", "strategy", "estimator", "iteration", "id", "arm"]);
    for t in traces {
        for a in &t.acquired {
            w.row([
                t.realization.to_string(),
                t.strategy.clone(),
                t.estimator.clone(),
                a.iteration.to_string(),
                world_labels(t.realization, a.id),
                arm(a.treated).to_string(),
            ]);
        }
    }
    w
}

/// `iteration, id, pc1, pc2, arm` rows; `points[k]` holds iteration `k`.
pub fn pca_csv(points: &[(usize, Vec<(String, PcaPoint)>)]) -> CsvBuffer {
    let mut w = CsvBuffer::new(["iteration", "id", "pc1", "pc2", "arm"]);
    for (iteration, pts) in points {
        for (label, p) in pts {
            w.row([
                iteration.to_string(),
                label.clone(),
                p.pc1.to_string(),
                p.pc2.to_string(),
                arm(p.treated).to_string(),
            ]);
        }
    }
    w
}

/// Reads traces written by [`traces_csv`] and [`trace_index_csv`]. The
/// acquired-unit lists are not restored.
pub fn read_traces(trace_path: &Path, index_path: &Path) -> Result<Vec<AcquisitionTrace>, IoError> {
    type Key = (usize, String, String);
    let mut traces: BTreeMap<Key, AcquisitionTrace> = BTreeMap::new();
    let mut order: Vec<Key> = Vec::new();

    let mut rdr = open(index_path)?;
    let headers = rdr.headers().map_err(csv_err(index_path))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(index_path, format!("no `{name}` column")))
    };
    let c = [
        col("realization")?,
        col("seed")?,
        col("strategy")?,
        col("estimator")?,
        col("optimal_eps_ate")?,
        col("optimal_sqrt_pehe")?,
        col("failure")?,
    ];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(index_path))?;
        let line = r + 2;
        let int = |i: usize| -> Result<u64, IoError> {
            rec[c[i]].parse().map_err(|_| IoError::Cell {
                path: index_path.to_path_buf(),
                line,
                column: headers[c[i]].to_string(),
                reason: "not a non-negative integer".into(),
            })
        };
        let optimal = if rec[c[4]].is_empty() {
            None
        } else {
            Some(OptimalReference {
                eps_ate: parse_number(index_path, line, "optimal_eps_ate", &rec[c[4]])?,
                sqrt_pehe: parse_number(index_path, line, "optimal_sqrt_pehe", &rec[c[5]])?,
            })
        };
        let key = (int(0)? as usize, rec[c[2]].to_string(), rec[c[3]].to_string());
        let trace = AcquisitionTrace {
            realization: key.0,
            seed: int(1)?,
            strategy: key.1.clone(),
            estimator: key.2.clone(),
            records: Vec::new(),
            acquired: Vec::new(),
            optimal,
            failure: (!rec[c[6]].is_empty()).then(|| rec[c[6]].to_string()),
        };
        if traces.insert(key.clone(), trace).is_some() {
            return Err(format_err(index_path, format!("line {line}: duplicate trace")));
        }
        order.push(key);
    }

    let mut rdr = open(trace_path)?;
    let headers = rdr.headers().map_err(csv_err(trace_path))?.clone();
    if headers.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(format_err(trace_path, "unexpected header"));
    }
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(trace_path))?;
        let line = r + 2;
        let int = |i: usize| -> Result<usize, IoError> {
            rec[i].parse().map_err(|_| IoError::Cell {
                path: trace_path.to_path_buf(),
                line,
                column: TRACE_HEADER[i].to_string(),
                reason: "not a non-negative integer".into(),
            })
        };
        let num = |i: usize| parse_number(trace_path, line, TRACE_HEADER[i], &rec[i]);
        let key = (int(0)?, rec[1].to_string(), rec[2].to_string());
        let trace = traces
            .get_mut(&key)
            .ok_or_else(|| format_err(trace_path, format!("line {line}: trace missing from the index")))?;
        trace.records.push(MetricsRecord {
            iteration: int(3)?,
            n_acquired: int(4)?,
            eps_ate: num(5)?,
            pehe: num(6)?,
            sqrt_pehe: num(7)?,
            n_treated_acquired: int(8)?,
            n_control_acquired: int(9)?,
        });
    }
    Ok(order
        .into_iter()
        .map(|k| traces.remove(&k).expect("key recorded above"))
        .collect())
}
