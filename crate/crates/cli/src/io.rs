//! File IO: canonical JSON documents, NDJSON datasets, CSV traces.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::canon;
use crate::ioerr::IoError;
use crate::schema::{self, OfflineRecordDoc};

/// Write a document as canonical JSON.
pub fn save_canonical<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let bytes = canon::to_canonical_bytes(value)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Load a versioned document: the version and kind headers are checked on
/// the raw tree before the strict field-level parse, so a foreign version
/// reports as a version error rather than an unknown-field error.
pub fn load_document<T: DeserializeOwned>(path: &Path, expected_kind: &str) -> Result<T, IoError> {
    let text = fs::read_to_string(path)?;
    let tree: Value = serde_json::from_str(&text).map_err(IoError::from_serde)?;
    let version = tree
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| IoError::Schema("missing version field".into()))?;
    if version != schema::SCHEMA_VERSION {
        return Err(IoError::Version {
            found: version,
            expected: schema::SCHEMA_VERSION,
        });
    }
    let kind = tree
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| IoError::Schema("missing kind field".into()))?;
    if kind != expected_kind {
        return Err(IoError::Schema(format!(
            "expected kind {expected_kind:?}, found {kind:?}"
        )));
    }
    serde_json::from_value(tree).map_err(IoError::from_serde)
}

/// Plain (unversioned) JSON load for config files.
pub fn load_plain<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(IoError::from_serde)
}

/// One cell of a CSV row.
#[derive(Clone, Copy, Debug)]
pub enum CsvCell {
    Int(i64),
    Float(f64),
}

impl From<f64> for CsvCell {
    fn from(x: f64) -> Self {
        CsvCell::Float(x)
    }
}

impl From<usize> for CsvCell {
    fn from(x: usize) -> Self {
        CsvCell::Int(x as i64)
    }
}

impl From<bool> for CsvCell {
    fn from(x: bool) -> Self {
        CsvCell::Int(x as i64)
    }
}

/// Write a CSV with a header row; floats in the canonical 17-digit form.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<CsvCell>]) -> Result<(), IoError> {
    let mut out = Vec::with_capacity(rows.len() * 32 + 64);
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let mut first = true;
        for cell in row {
            if !first {
                out.push(b',');
            }
            first = false;
            match cell {
                CsvCell::Int(i) => write!(out, "{i}")?,
                CsvCell::Float(f) => write!(out, "{}", canon::float17(*f))?,
            }
        }
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Count the data rows of a CSV (excluding the header).
pub fn csv_row_count(path: &Path) -> Result<usize, IoError> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().count().saturating_sub(1))
}

/// Offline dataset as NDJSON, one record per line.
pub fn save_ndjson(path: &Path, records: &[OfflineRecordDoc]) -> Result<(), IoError> {
    let mut out = Vec::with_capacity(records.len() * 64);
    for record in records {
        let bytes = canon::to_canonical_bytes(record)?;
        // canonical bytes already end with a newline
        out.extend_from_slice(&bytes);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_ndjson(path: &Path) -> Result<Vec<OfflineRecordDoc>, IoError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(IoError::from_serde)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::PolicyDoc;
    use refuel_core::mdp::Policy;

    #[test]
    fn document_round_trip_and_version_rejection() {
        let dir = std::env::temp_dir().join(format!("refuel-io-test-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("policy.json");
        let policy = Policy::random(2, 3, 2, 5);
        save_canonical(&path, &PolicyDoc::from_core(&policy)).unwrap();
        let doc: PolicyDoc = load_document(&path, "policy").unwrap();
        let back = doc.into_core().unwrap();
        assert_eq!(policy.data(), back.data());

        // Bump the version field: must be a version error, not a parse error.
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\":1", "\"version\":2");
        fs::write(&path, text).unwrap();
        match load_document::<PolicyDoc>(&path, "policy") {
            Err(IoError::Version { found: 2, .. }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
        fs::remove_dir_all(&dir).ok();
    }
}
