//! CSV, JSON and SVG output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::runner::{mse_db, McResult, TrialTrace};
use super::svg::{render, Panel, Series, PALETTE};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "k,node,mse,mse_db";
pub const COMPARE_HEADER: &str = "estimator,k,node,mse,mse_db";

/// One row per `(k, node)`, nodes numbered from 1.
pub fn csv_string(result: &McResult) -> String {
    let mut out = String::with_capacity(64 * result.mse.len() * result.nodes + 32);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (k, row) in result.mse.iter().enumerate() {
        for (i, &m) in row.iter().enumerate() {
            let _ = writeln!(out, "{k},{},{m:.16e},{:.16e}", i + 1, mse_db(m));
        }
    }
    out
}

/// Joint CSV for several estimators run on one scenario.
pub fn compare_csv_string(results: &[McResult]) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for r in results {
        let name = &r.metadata.estimator;
        for (k, row) in r.mse.iter().enumerate() {
            for (i, &m) in row.iter().enumerate() {
                let _ = writeln!(out, "{name},{k},{},{m:.16e},{:.16e}", i + 1, mse_db(m));
            }
        }
    }
    out
}

/// A parsed row of the per-node CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub k: usize,
    pub node: usize,
    pub mse: f64,
    pub mse_db: f64,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Validation(format!("csv header must be `{CSV_HEADER}`")));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let bad = || Error::Validation(format!("csv line {}: malformed `{line}`", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(CsvRow {
                k: f[0].parse().map_err(|_| bad())?,
                node: f[1].parse().map_err(|_| bad())?,
                mse: f[2].parse().map_err(|_| bad())?,
                mse_db: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_csv(path: &Path, result: &McResult) -> Result<()> {
    write_file(path, &csv_string(result))
}

pub fn write_compare_csv(path: &Path, results: &[McResult]) -> Result<()> {
    write_file(path, &compare_csv_string(results))
}

pub fn write_metadata(path: &Path, result: &McResult) -> Result<()> {
    let json = serde_json::to_string_pretty(&result.metadata)
        .map_err(|e| Error::Validation(format!("metadata serialization: {e}")))?;
    write_file(path, &(json + "\n"))
}

/// MSE in dB against time, one panel per node, one series per result.
pub fn mse_svg(results: &[McResult]) -> String {
    let nodes = results.first().map_or(0, |r| r.nodes);
    let panels: Vec<Panel> = (0..nodes)
        .map(|i| Panel {
            title: format!("node {}", i + 1),
            x_label: "k".into(),
            y_label: "MSE (dB)".into(),
            series: results
                .iter()
                .enumerate()
                .map(|(s, r)| Series {
                    label: r.metadata.estimator.clone(),
                    points: r.mse.iter().enumerate().map(|(k, row)| (k as f64, mse_db(row[i]))).collect(),
                    color: PALETTE[s % PALETTE.len()],
                    dashed: s > 0,
                })
                .collect(),
        })
        .collect();
    render(&panels, 2)
}

/// True state components against estimates for one recorded trial.
pub fn states_svg(trace: &TrialTrace) -> String {
    let nodes = trace.states.first().map_or(0, Vec::len);
    let dim = trace.states.first().and_then(|s| s.first()).map_or(0, |x| x.len());
    let mut panels = Vec::new();
    for i in 0..nodes {
        for c in 0..dim {
            let pick = |src: &Vec<Vec<nalgebra::DVector<f64>>>| -> Vec<(f64, f64)> {
                src.iter().enumerate().map(|(k, xs)| (k as f64, xs[i][c])).collect()
            };
            panels.push(Panel {
                title: format!("node {} component {}", i + 1, c + 1),
                x_label: "k".into(),
                y_label: "state".into(),
                series: vec![
                    Series { label: "true".into(), points: pick(&trace.states), color: PALETTE[0], dashed: false },
                    Series { label: "estimate".into(), points: pick(&trace.estimates), color: PALETTE[1], dashed: true },
                ],
            });
        }
    }
    render(&panels, dim.max(1))
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    write_file(path, svg)
}
