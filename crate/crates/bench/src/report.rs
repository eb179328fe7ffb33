//! CSV tables built from persisted run records.
//!
//! Numeric columns use the shortest round-trip representation, so parsing
//! them back yields the recorded values exactly. The layout tables
//! (`cosine.csv`, `calibration_jitter.csv`) hold formatted text cells.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use msphs::SystemId;

use crate::error::{BenchError, Result};
use crate::method::MethodId;
use crate::stats::Summary;
use crate::sweep::{aggregate, AggregateRow, RunRecord};

pub const VF_MSE_FILE: &str = "vf_mse.csv";
pub const COSINE_FILE: &str = "cosine.csv";
pub const CALIBRATION_NOISE_FILE: &str = "calibration_noise.csv";
pub const CALIBRATION_JITTER_FILE: &str = "calibration_jitter.csv";
pub const AGGREGATES_FILE: &str = "aggregates.csv";

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Rounds to three significant digits for display cells.
pub fn sig3(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let decimals = (2 - v.abs().log10().floor() as i32).max(0) as usize;
    format!("{v:.decimals$}")
}

/// `mean (std)` as in the cosine table.
pub fn mean_std_cell(s: &Summary) -> String {
    format!("{} ({})", sig3(s.mean), sig3(s.std))
}

/// `median [Q1, Q3]` as in the jitter calibration table.
pub fn median_iqr_cell(s: &Summary) -> String {
    format!("{} [{}, {}]", sig3(s.median), sig3(s.q1), sig3(s.q3))
}

fn runs_cell(row: &AggregateRow) -> String {
    format!("{}/{}", row.n_ok, row.n_total)
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<PathBuf> {
    w.flush().map_err(|e| BenchError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn summary_columns(s: Option<&Summary>) -> Vec<String> {
    match s {
        Some(s) => vec![
            num(s.mean),
            num(s.std),
            num(s.ci_low),
            num(s.ci_high),
            num(s.median),
            num(s.q1),
            num(s.q3),
        ],
        None => vec![String::new(); 7],
    }
}

const SUMMARY_HEADER: [&str; 7] = ["mean", "std", "ci_low", "ci_high", "median", "q1", "q3"];

/// Long-format table with every summary of every cell.
fn write_aggregates(rows: &[AggregateRow], path: &Path) -> Result<PathBuf> {
    let mut w = writer(path)?;
    let mut header = vec!["system", "method", "noise_variance", "sigma_j", "n_ok", "n_total", "metric"];
    header.extend(SUMMARY_HEADER);
    w.write_record(&header)?;
    for row in rows {
        let metrics = [
            ("vf_mse", &row.vf_mse),
            ("vf_cosine_distance", &row.vf_cosine_distance),
            ("h_mse", &row.h_mse),
            ("mean_sigma_h2", &row.mean_sigma_h2),
            ("ratio", &row.ratio),
        ];
        for (name, s) in metrics {
            if s.is_none() && name != "vf_mse" {
                continue;
            }
            let mut rec = vec![
                row.cell.system.to_string(),
                row.cell.method.to_string(),
                num(row.cell.noise_variance),
                num(row.cell.sigma_j),
                row.n_ok.to_string(),
                row.n_total.to_string(),
                name.to_string(),
            ];
            rec.extend(summary_columns(s.as_ref()));
            w.write_record(&rec)?;
        }
    }
    finish(w, path)
}

fn write_vf_mse(rows: &[AggregateRow], path: &Path) -> Result<PathBuf> {
    let mut w = writer(path)?;
    let mut header = vec!["system", "method", "noise_variance", "sigma_j", "n_ok", "n_total"];
    header.extend(SUMMARY_HEADER);
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![
            row.cell.system.to_string(),
            row.cell.method.to_string(),
            num(row.cell.noise_variance),
            num(row.cell.sigma_j),
            row.n_ok.to_string(),
            row.n_total.to_string(),
        ];
        rec.extend(summary_columns(row.vf_mse.as_ref()));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

/// Rows `(system, noise, jitter)`, one `mean (std)` column per method plus its run count.
fn write_cosine(rows: &[AggregateRow], methods: &[MethodId], path: &Path) -> Result<PathBuf> {
    let mut w = writer(path)?;
    let mut header = vec!["system".to_string(), "noise_variance".into(), "sigma_j".into()];
    for m in methods {
        header.push(m.to_string());
        header.push(format!("{m} runs"));
    }
    w.write_record(&header)?;
    let mut table: BTreeMap<(SystemId, u64, u64), BTreeMap<MethodId, &AggregateRow>> = BTreeMap::new();
    for row in rows {
        let key = (row.cell.system, row.cell.noise_variance.to_bits(), row.cell.sigma_j.to_bits());
        table.entry(key).or_default().insert(row.cell.method, row);
    }
    for ((system, nv, sj), by_method) in table {
        let mut rec = vec![system.to_string(), num(f64::from_bits(nv)), num(f64::from_bits(sj))];
        for m in methods {
            match by_method.get(m) {
                Some(row) => {
                    rec.push(row.vf_cosine_distance.as_ref().map(mean_std_cell).unwrap_or_default());
                    rec.push(runs_cell(row));
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    finish(w, path)
}

fn write_calibration_noise(rows: &[AggregateRow], path: &Path) -> Result<PathBuf> {
    let mut w = writer(path)?;
    w.write_record([
        "system",
        "method",
        "sigma_j",
        "noise_variance",
        "n_ok",
        "n_total",
        "h_mse_median",
        "h_mse_q1",
        "h_mse_q3",
        "sigma_h2_median",
        "sigma_h2_q1",
        "sigma_h2_q3",
        "ratio_median",
        "ratio_q1",
        "ratio_q3",
    ])?;
    let mut sorted: Vec<&AggregateRow> = rows.iter().filter(|r| r.cell.method.has_hamiltonian()).collect();
    sorted.sort_by(|a, b| {
        (a.cell.system, a.cell.method, a.cell.sigma_j.to_bits(), a.cell.noise_variance.to_bits()).cmp(&(
            b.cell.system,
            b.cell.method,
            b.cell.sigma_j.to_bits(),
            b.cell.noise_variance.to_bits(),
        ))
    });
    for row in sorted {
        let mut rec = vec![
            row.cell.system.to_string(),
            row.cell.method.to_string(),
            num(row.cell.sigma_j),
            num(row.cell.noise_variance),
            row.n_ok.to_string(),
            row.n_total.to_string(),
        ];
        for s in [&row.h_mse, &row.mean_sigma_h2, &row.ratio] {
            rec.push(opt(s.map(|s| s.median)));
            rec.push(opt(s.map(|s| s.q1)));
            rec.push(opt(s.map(|s| s.q3)));
        }
        w.write_record(&rec)?;
    }
    finish(w, path)
}

/// Rows `(system, noise, σ_j)`, one `median [Q1, Q3]` ratio column per method.
fn write_calibration_jitter(rows: &[AggregateRow], methods: &[MethodId], path: &Path) -> Result<PathBuf> {
    let methods: Vec<MethodId> = methods.iter().copied().filter(MethodId::has_hamiltonian).collect();
    let mut w = writer(path)?;
    let mut header = vec!["system".to_string(), "noise_variance".into(), "sigma_j".into()];
    for m in &methods {
        header.push(m.to_string());
        header.push(format!("{m} runs"));
    }
    w.write_record(&header)?;
    let mut table: BTreeMap<(SystemId, u64, u64), BTreeMap<MethodId, &AggregateRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.cell.method.has_hamiltonian()) {
        let key = (row.cell.system, row.cell.noise_variance.to_bits(), row.cell.sigma_j.to_bits());
        table.entry(key).or_default().insert(row.cell.method, row);
    }
    for ((system, nv, sj), by_method) in table {
        let mut rec = vec![system.to_string(), num(f64::from_bits(nv)), num(f64::from_bits(sj))];
        for m in &methods {
            match by_method.get(m) {
                Some(row) => {
                    rec.push(row.ratio.as_ref().map(median_iqr_cell).unwrap_or_default());
                    rec.push(runs_cell(row));
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    finish(w, path)
}

/// Writes every report table into `out` and returns the written paths.
pub fn write_report(records: &[RunRecord], out: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(BenchError::EmptyStore(out.display().to_string()));
    }
    fs::create_dir_all(out).map_err(|e| BenchError::io(out, e))?;
    let rows = aggregate(records);
    let methods: Vec<MethodId> = rows.iter().map(|r| r.cell.method).collect::<BTreeSet<_>>().into_iter().collect();
    Ok(vec![
        write_aggregates(&rows, &out.join(AGGREGATES_FILE))?,
        write_vf_mse(&rows, &out.join(VF_MSE_FILE))?,
        write_cosine(&rows, &methods, &out.join(COSINE_FILE))?,
        write_calibration_noise(&rows, &out.join(CALIBRATION_NOISE_FILE))?,
        write_calibration_jitter(&rows, &methods, &out.join(CALIBRATION_JITTER_FILE))?,
    ])
}
