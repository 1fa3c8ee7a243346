//! Aggregation of run directories into `summary.csv` (mean and sample
//! standard deviation per method and task) and a long-format table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tsc_core::evalkit::mean_std;

use crate::artifacts::METRICS_COLUMNS;
use crate::error::{CliError, CliResult};

pub const SUMMARY_METRICS: [&str; 5] = ["a_top1", "a_top5", "bwt", "probe_nc", "probe_bc"];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub t: usize,
    /// `(mean, std, n)` per entry of `SUMMARY_METRICS`; `None` when no run
    /// reported the metric.
    pub stats: Vec<Option<(f64, f64, usize)>>,
}

fn read_metrics(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    for (i, col) in METRICS_COLUMNS.iter().enumerate() {
        if header.get(i).map(String::as_str) != Some(col) {
            return Err(CliError::Schema {
                path: path.to_path_buf(),
                message: format!("missing column `{col}` at position {}", i + 1),
            });
        }
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Schema { path: path.to_path_buf(), message: e.to_string() })?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Reads `metrics.csv` from each run directory (or a CSV path given
/// directly) and aggregates.
pub fn summarize(inputs: &[PathBuf]) -> CliResult<Vec<SummaryRow>> {
    if inputs.is_empty() {
        return Err(CliError::Usage("report needs at least one run directory".into()));
    }
    let mut expected: Option<(PathBuf, Vec<String>)> = None;
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<Vec<String>>> = BTreeMap::new();
    for input in inputs {
        let path = if input.is_dir() { input.join("metrics.csv") } else { input.clone() };
        let (header, rows) = read_metrics(&path)?;
        match &expected {
            None => expected = Some((path.clone(), header.clone())),
            Some((first, h)) if *h != header => {
                return Err(CliError::Schema {
                    path: path.clone(),
                    message: format!("columns differ from {}", first.display()),
                });
            }
            _ => {}
        }
        for row in rows {
            let method = row[1].clone();
            let t: usize = row[2].parse().map_err(|_| CliError::Schema {
                path: path.clone(),
                message: format!("bad task index `{}`", row[2]),
            })?;
            let m = match order.iter().position(|x| *x == method) {
                Some(i) => i,
                None => {
                    order.push(method);
                    order.len() - 1
                }
            };
            groups.entry((m, t)).or_default().push(row);
        }
    }
    let mut out = Vec::new();
    for ((m, t), rows) in groups {
        let stats = SUMMARY_METRICS
            .iter()
            .map(|metric| {
                let col = METRICS_COLUMNS.iter().position(|c| c == metric).expect("summary metric is a column");
                let values: Vec<f64> = rows.iter().filter_map(|r| r[col].parse().ok()).collect();
                if values.is_empty() {
                    None
                } else {
                    let (mean, std) = mean_std(&values);
                    Some((mean, std, values.len()))
                }
            })
            .collect();
        out.push(SummaryRow { method: order[m].clone(), t, stats });
    }
    Ok(out)
}

/// Writes `summary.csv` and `summary_long.csv` into `out`.
pub fn emit_report(inputs: &[PathBuf], out: &Path) -> CliResult<Vec<SummaryRow>> {
    let rows = summarize(inputs)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();

    let mut wide = csv::Writer::from_path(out.join("summary.csv"))?;
    let mut header = vec!["method".to_string(), "t".to_string()];
    for m in SUMMARY_METRICS {
        header.extend([format!("{m}_mean"), format!("{m}_std"), format!("{m}_n")]);
    }
    wide.write_record(&header)?;
    let mut long = csv::Writer::from_path(out.join("summary_long.csv"))?;
    long.write_record(["method", "t", "metric", "mean", "std", "n"])?;
    for row in &rows {
        let mut rec = vec![row.method.clone(), row.t.to_string()];
        for (metric, s) in SUMMARY_METRICS.iter().zip(&row.stats) {
            rec.extend([cell(s.map(|s| s.0)), cell(s.map(|s| s.1)), s.map(|s| s.2.to_string()).unwrap_or_default()]);
            if let Some((mean, std, n)) = s {
                long.write_record([
                    row.method.clone(),
                    row.t.to_string(),
                    metric.to_string(),
                    mean.to_string(),
                    std.to_string(),
                    n.to_string(),
                ])?;
            }
        }
        wide.write_record(&rec)?;
    }
    wide.flush().map_err(|e| CliError::io(out, e))?;
    long.flush().map_err(|e| CliError::io(out, e))?;
    Ok(rows)
}
