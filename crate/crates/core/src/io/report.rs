//! Per-layer result rows written as CSV with a JSON mirror.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Column order of the CSV header.
pub const CSV_HEADERS: [&str; 8] = [
    "layer",
    "mode",
    "threshold",
    "exact",
    "nonzero",
    "performed",
    "sparsity",
    "accuracy",
];

/// One row of a sweep or inference report. Counts are per-image means;
/// `sparsity` is the layer's mean output zero fraction; `accuracy` is the
/// run's top-1 accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub layer: String,
    pub mode: String,
    pub threshold: String,
    pub exact: f64,
    pub nonzero: f64,
    pub performed: f64,
    pub sparsity: Option<f64>,
    pub accuracy: Option<f64>,
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(CSV_HEADERS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>, DataError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<ReportRow>, _>>()?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), DataError> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_headers_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![
            ReportRow {
                layer: "conv1".into(),
                mode: "exact".into(),
                threshold: String::new(),
                exact: 86400.0,
                nonzero: 20000.5,
                performed: 86400.0,
                sparsity: Some(0.25),
                accuracy: Some(0.98),
            },
            ReportRow {
                layer: "total".into(),
                mode: "approx".into(),
                threshold: "f:0.3".into(),
                exact: 270720.0,
                nonzero: 1.0,
                performed: 2.0,
                sparsity: None,
                accuracy: None,
            },
        ];
        write_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADERS.join(","));
        assert_eq!(read_csv(&path).unwrap(), rows);
    }

    #[test]
    fn empty_report_still_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_csv(&path, &[]).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap().trim(),
            CSV_HEADERS.join(",")
        );
    }
}
