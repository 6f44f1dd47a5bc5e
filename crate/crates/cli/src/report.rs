//! Run reports: a flat metric map plus named curves, written as canonical
//! JSON with a SHA-256 sidecar and one CSV per curve.
//!
//! Wall-clock time is kept in memory and logged to stderr but never
//! serialized: reruns of the same config and seed must produce
//! byte-identical artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canon;
use crate::io::{self, CsvCell};
use crate::ioerr::IoError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Curve {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub metrics: BTreeMap<String, f64>,
    pub curves: Vec<Curve>,
    /// Resolved configuration snapshot; sufficient to reproduce the run.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Not serialized; reported on stderr only.
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn new(config: serde_json::Value, seeds: Vec<u64>) -> Self {
        RunReport {
            metrics: BTreeMap::new(),
            curves: Vec::new(),
            config,
            seeds,
            wall_clock_secs: 0.0,
        }
    }

    pub fn insert_metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDoc {
    pub version: u64,
    pub kind: String,
    pub metrics: BTreeMap<String, f64>,
    pub curves: Vec<Curve>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
}

impl ReportDoc {
    pub fn from_report(report: &RunReport) -> Self {
        ReportDoc {
            version: crate::schema::SCHEMA_VERSION,
            kind: "report".into(),
            metrics: report.metrics.clone(),
            curves: report.curves.clone(),
            config: report.config.clone(),
            seeds: report.seeds.clone(),
        }
    }
}

/// Write `<stem>.json`, `<stem>.json.sha256` and one `<stem>.<curve>.csv`
/// per curve. Every metric must be finite (the canonical writer rejects
/// anything else). Returns the written paths; idempotent for equal inputs.
pub fn emit_report(report: &RunReport, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, IoError> {
    for (name, value) in &report.metrics {
        if !value.is_finite() {
            return Err(IoError::Schema(format!("metric {name:?} is not finite")));
        }
    }
    for curve in &report.curves {
        if curve.rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(IoError::Schema(format!(
                "curve {:?} holds a non-finite value",
                curve.name
            )));
        }
    }
    fs::create_dir_all(dir)?;
    let doc = ReportDoc::from_report(report);
    let bytes = canon::to_canonical_bytes(&doc)?;
    let mut written = Vec::new();

    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&json_path, &bytes)?;
    written.push(json_path);

    let hash_path = dir.join(format!("{stem}.json.sha256"));
    fs::write(&hash_path, format!("{}\n", canon::sha256_hex(&bytes)))?;
    written.push(hash_path);

    for curve in &report.curves {
        let csv_path = dir.join(format!("{stem}.{}.csv", curve.name));
        let header: Vec<&str> = curve.columns.iter().map(String::as_str).collect();
        let rows: Vec<Vec<CsvCell>> = curve
            .rows
            .iter()
            .map(|row| row.iter().map(|&x| CsvCell::Float(x)).collect())
            .collect();
        io::write_csv(&csv_path, &header, &rows)?;
        written.push(csv_path);
    }
    Ok(written)
}

pub fn load_report(path: &Path) -> Result<ReportDoc, IoError> {
    io::load_document(path, "report")
}

/// Median of an unsorted slice (midpoint average for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("metrics are finite"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_round_trip_and_stable_hash() {
        let dir = std::env::temp_dir().join(format!("refuel-report-test-{}", std::process::id()));
        let mut report = RunReport::new(serde_json::json!({"alpha": 1}), vec![3]);
        report.insert_metric("gap", 0.25);
        report.curves.push(Curve {
            name: "trace".into(),
            columns: vec!["n".into(), "value".into()],
            rows: vec![vec![1.0, 0.5], vec![2.0, 0.25]],
        });
        report.wall_clock_secs = 123.0; // must not affect bytes
        let first = emit_report(&report, &dir, "report").unwrap();
        let bytes1 = fs::read(&first[0]).unwrap();
        report.wall_clock_secs = 456.0;
        emit_report(&report, &dir, "report").unwrap();
        let bytes2 = fs::read(&first[0]).unwrap();
        assert_eq!(bytes1, bytes2);

        let doc = load_report(&first[0]).unwrap();
        assert_eq!(doc.metrics["gap"], 0.25);
        assert_eq!(io::csv_row_count(&dir.join("report.trace.csv")).unwrap(), 2);

        let hash = fs::read_to_string(&first[1]).unwrap();
        assert_eq!(hash.trim(), canon::sha256_hex(&bytes1));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
