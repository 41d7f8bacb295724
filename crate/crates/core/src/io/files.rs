//! CSV and JSON output formats.
//!
//! Reals are written in the shortest form that parses back to the same
//! bits, so every reader here reproduces what was written exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{EnsembleStats, IterationRow, LambdaTuning, StopReason, TrajectoryRecord};
use crate::fock::DensityMatrix;
use crate::reconstruction::{ProbeRecord, ProbeSample, Reconstruction};

fn real(x: f64) -> String {
    format!("{x:?}")
}

fn opt_real(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// The `k`-th field of a record, parsed.
fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, k: usize, line: usize) -> Result<T> {
    let raw = rec
        .get(k)
        .ok_or_else(|| format_err(path, format!("row {line}: missing column {k}")))?;
    raw.parse()
        .map_err(|_| format_err(path, format!("row {line}: cannot parse `{raw}` in column {k}")))
}

fn opt_field(path: &Path, rec: &csv::StringRecord, k: usize, line: usize) -> Result<Option<f64>> {
    match rec.get(k) {
        Some("") => Ok(None),
        _ => field(path, rec, k, line).map(Some),
    }
}

fn population_columns(prefix: &str, dim: usize) -> impl Iterator<Item = String> + '_ {
    (0..dim).map(move |n| format!("{prefix}_{n}"))
}

/// Header of a trajectory file: six scalar columns, then estimated and
/// truth populations.
pub fn trajectory_header(dim: usize) -> Vec<String> {
    ["index", "time_s", "reported_e", "reported_g", "alpha", "distance"]
        .iter()
        .map(|s| s.to_string())
        .chain(population_columns("P_est", dim))
        .chain(population_columns("P_true", dim))
        .collect()
}

/// Path of the JSON sidecar that holds a trajectory's terminal data.
pub fn trajectory_meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    iteration: usize,
    rho: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryMeta {
    dim: usize,
    iterations: usize,
    stop_reason: StopReason,
    stop_time_s: f64,
    converged_at: Option<usize>,
    final_estimate: Vec<Vec<f64>>,
    final_truth: Vec<Vec<f64>>,
    snapshots: Vec<Snapshot>,
    probes: Option<ProbeRecord>,
}

fn matrix_rows(rho: &DensityMatrix) -> Vec<Vec<f64>> {
    let m = rho.matrix();
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_from_rows(path: &Path, rows: &[Vec<f64>]) -> Result<DensityMatrix> {
    let dim = rows.len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(format_err(path, "density matrix is not square"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    DensityMatrix::from_matrix(DMatrix::from_row_slice(dim, dim, &flat))
        .map_err(|e| format_err(path, e.to_string()))
}

/// Writes the per-iteration rows to `path` and the terminal data to
/// [`trajectory_meta_path`].
pub fn write_trajectory(path: &Path, record: &TrajectoryRecord) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(trajectory_header(record.dim))
        .map_err(|e| Error::csv(path, e))?;
    for r in &record.rows {
        let mut fields = vec![
            r.index.to_string(),
            real(r.time_s),
            r.reported_e.to_string(),
            r.reported_g.to_string(),
            real(r.alpha),
            real(r.distance),
        ];
        fields.extend(r.p_est.iter().map(|&x| real(x)));
        fields.extend(r.p_true.iter().map(|&x| real(x)));
        w.write_record(&fields).map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)?;

    let meta = TrajectoryMeta {
        dim: record.dim,
        iterations: record.rows.len(),
        stop_reason: record.stop_reason,
        stop_time_s: record.stop_time_s,
        converged_at: record.converged_at,
        final_estimate: matrix_rows(&record.final_estimate),
        final_truth: matrix_rows(&record.final_truth),
        snapshots: record
            .snapshots
            .iter()
            .map(|(i, rho)| Snapshot {
                iteration: *i,
                rho: matrix_rows(rho),
            })
            .collect(),
        probes: record.probes.clone(),
    };
    write_json(&trajectory_meta_path(path), &meta)
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryRecord> {
    let meta_path = trajectory_meta_path(path);
    let meta: TrajectoryMeta = read_json(&meta_path)?;
    let dim = meta.dim;
    let mut r = reader(path)?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let expected = trajectory_header(dim);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(format_err(
            path,
            format!("header does not match a dim = {dim} trajectory ({} columns expected)", expected.len()),
        ));
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = k + 2;
        let reals = |from: usize| -> Result<Vec<f64>> { (from..from + dim).map(|j| field(path, &rec, j, line)).collect() };
        rows.push(IterationRow {
            index: field(path, &rec, 0, line)?,
            time_s: field(path, &rec, 1, line)?,
            reported_e: field(path, &rec, 2, line)?,
            reported_g: field(path, &rec, 3, line)?,
            alpha: field(path, &rec, 4, line)?,
            distance: field(path, &rec, 5, line)?,
            p_est: reals(6)?,
            p_true: reals(6 + dim)?,
        });
    }
    if rows.len() != meta.iterations {
        return Err(format_err(
            path,
            format!("{} rows but the sidecar records {} iterations", rows.len(), meta.iterations),
        ));
    }
    let snapshots = meta
        .snapshots
        .iter()
        .map(|s| Ok((s.iteration, matrix_from_rows(&meta_path, &s.rho)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryRecord {
        dim,
        rows,
        stop_reason: meta.stop_reason,
        stop_time_s: meta.stop_time_s,
        converged_at: meta.converged_at,
        final_estimate: matrix_from_rows(&meta_path, &meta.final_estimate)?,
        final_truth: matrix_from_rows(&meta_path, &meta.final_truth)?,
        snapshots,
        probes: meta.probes,
    })
}

/// Ensemble means per iteration.
pub fn write_ensemble_series(path: &Path, stats: &EnsembleStats) -> Result<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = ["index", "time_s", "active", "mean_abs_alpha", "mean_distance"]
        .iter()
        .map(|s| s.to_string())
        .chain(population_columns("P_est", stats.dim))
        .chain(population_columns("P_true", stats.dim))
        .collect();
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for i in 0..stats.active.len() {
        let mut fields = vec![
            i.to_string(),
            real(stats.time(i)),
            stats.active[i].to_string(),
            real(stats.mean_abs_alpha[i]),
            real(stats.mean_distance[i]),
        ];
        fields.extend(stats.mean_p_est[i].iter().map(|&x| real(x)));
        fields.extend(stats.mean_p_true[i].iter().map(|&x| real(x)));
        w.write_record(&fields).map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

/// One row per trajectory with its stop data and terminal populations.
pub fn write_trajectory_summaries(path: &Path, stats: &EnsembleStats) -> Result<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = ["index", "stop_reason", "iterations", "attempts", "convergence_time_s"]
        .iter()
        .map(|s| s.to_string())
        .chain(population_columns("P_true_final", stats.dim))
        .chain(population_columns("P_est_final", stats.dim))
        .collect();
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for s in &stats.trajectories {
        let mut fields = vec![
            s.index.to_string(),
            s.stop_reason.as_str().to_string(),
            s.iterations.to_string(),
            s.attempts.to_string(),
            opt_real(s.convergence_time),
        ];
        fields.extend(s.final_p_true.iter().map(|&x| real(x)));
        fields.extend(s.final_p_est.iter().map(|&x| real(x)));
        w.write_record(&fields).map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

/// Stepped convergence fraction `C_fr(t)`.
pub fn write_convergence_curve(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["time_s", "fraction"]).map_err(|e| Error::csv(path, e))?;
    for &(t, f) in curve {
        w.write_record([real(t), real(f)]).map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

/// A photon-number histogram as `n,p` rows.
pub fn write_histogram(path: &Path, p: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["n", "p"]).map_err(|e| Error::csv(path, e))?;
    for (n, &x) in p.iter().enumerate() {
        w.write_record([n.to_string(), real(x)]).map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

/// Reads an `n,p` histogram; rows must list `n = 0, 1, ...` in order.
pub fn read_histogram(path: &Path) -> Result<Vec<f64>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let n: usize = field(path, &rec, 0, k + 2)?;
        if n != k {
            return Err(format_err(path, format!("row {}: expected n = {k}, found {n}", k + 2)));
        }
        let p: f64 = field(path, &rec, 1, k + 2)?;
        if !(p.is_finite() && p >= 0.0) {
            return Err(format_err(path, format!("row {}: weight {p} is not a non-negative number", k + 2)));
        }
        out.push(p);
    }
    if out.len() < 2 {
        return Err(format_err(path, "histogram needs at least two photon numbers"));
    }
    if out.iter().sum::<f64>() <= 0.0 {
        return Err(format_err(path, "histogram weights sum to zero"));
    }
    Ok(out)
}

/// Probe samples, one row per sample, grouped by trajectory.
pub fn write_probes(path: &Path, records: &[ProbeRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["trajectory", "sample", "phi_r", "phi_0", "reported_e", "reported_g"])
        .map_err(|e| Error::csv(path, e))?;
    for (t, rec) in records.iter().enumerate() {
        for (k, s) in rec.samples.iter().enumerate() {
            w.write_record([
                t.to_string(),
                k.to_string(),
                real(s.phi_r),
                real(s.phi_0),
                s.reported_e.to_string(),
                s.reported_g.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    finish(w, path)
}

pub fn read_probes(path: &Path) -> Result<Vec<ProbeRecord>> {
    let mut r = reader(path)?;
    let mut out: Vec<ProbeRecord> = Vec::new();
    let mut current: Option<usize> = None;
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = k + 2;
        let t: usize = field(path, &rec, 0, line)?;
        if current != Some(t) {
            if current.is_some_and(|c| t < c) {
                return Err(format_err(path, format!("row {line}: trajectories must be in order")));
            }
            current = Some(t);
            out.push(ProbeRecord::default());
        }
        out.last_mut().expect("pushed above").samples.push(ProbeSample {
            phi_r: field(path, &rec, 2, line)?,
            phi_0: field(path, &rec, 3, line)?,
            reported_e: field(path, &rec, 4, line)?,
            reported_g: field(path, &rec, 5, line)?,
        });
    }
    Ok(out)
}

/// The reconstructed distribution as `n,p`, plus the EM log-likelihood
/// trace next to it.
pub fn write_reconstruction(path: &Path, trace_path: &Path, rec: &Reconstruction) -> Result<()> {
    write_histogram(path, &rec.distribution)?;
    let mut w = writer(trace_path)?;
    w.write_record(["iteration", "log_likelihood"])
        .map_err(|e| Error::csv(trace_path, e))?;
    for (i, &l) in rec.log_likelihood.iter().enumerate() {
        w.write_record([i.to_string(), real(l)])
            .map_err(|e| Error::csv(trace_path, e))?;
    }
    finish(w, trace_path)
}

/// A density matrix as `dim` rows under a `c_0..` header.
pub fn write_matrix(path: &Path, rho: &DensityMatrix) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(population_columns("c", rho.dim()))
        .map_err(|e| Error::csv(path, e))?;
    for row in matrix_rows(rho) {
        w.write_record(row.iter().map(|&x| real(x)))
            .map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

pub fn read_matrix(path: &Path) -> Result<DensityMatrix> {
    let mut r = reader(path)?;
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        rows.push((0..rec.len()).map(|j| field(path, &rec, j, k + 2)).collect::<Result<Vec<f64>>>()?);
    }
    matrix_from_rows(path, &rows)
}

/// Grid-search table; an empty time means the point never reached 63%.
pub fn write_tuning(path: &Path, tuning: &LambdaTuning) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["lambda_shape", "convergence_time_s", "best"])
        .map_err(|e| Error::csv(path, e))?;
    for &(shape, t) in &tuning.table {
        w.write_record([real(shape), opt_real(t), (shape == tuning.best_shape).to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

/// `metric,value` rows; `None` is written as an empty value.
pub fn write_metrics(path: &Path, metrics: &[(&str, Option<f64>)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["metric", "value"]).map_err(|e| Error::csv(path, e))?;
    for &(k, v) in metrics {
        w.write_record([k.to_string(), opt_real(v)])
            .map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

pub fn read_metrics(path: &Path) -> Result<Vec<(String, Option<f64>)>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let name = rec.get(0).unwrap_or_default().to_string();
        out.push((name, opt_field(path, &rec, 1, k + 2)?));
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| format_err(path, e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| format_err(path, e.to_string()))
}
