use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::Config(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })?;
    Ok(dir.to_path_buf())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    msbprune::io::write_json(path, value)?;
    Ok(())
}

/// Writes serializable rows with a header derived from the field names.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Binary PGM (P5), linearly mapping `[min, max]` of the grid to `[0, 255]`.
/// A constant grid is written black.
pub fn pgm_bytes(width: usize, height: usize, values: &[i32]) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    let lo = values.iter().copied().min().unwrap_or(0);
    let hi = values.iter().copied().max().unwrap_or(0);
    let span = i64::from(hi) - i64::from(lo);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if span == 0 {
            0
        } else {
            ((i64::from(v) - i64::from(lo)) * 255 / span) as u8
        }
    }));
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[i32]) -> CliResult<()> {
    fs::write(path, pgm_bytes(width, height, values)).map_err(|e| CliError::io(path, e))
}

pub fn write_grid_csv(path: &Path, width: usize, values: &[i32]) -> CliResult<()> {
    let mut text = String::with_capacity(values.len() * 6);
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(i32::to_string).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// `|approx - exact| / max(1, |exact|)` per element.
pub fn fractional_errors(exact: &[i32], approx: &[i32]) -> Vec<f64> {
    exact
        .iter()
        .zip(approx)
        .map(|(&e, &a)| (f64::from(a) - f64::from(e)).abs() / f64::from(e).abs().max(1.0))
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

/// Equal-width bins over `[0, 1]`; values at or above 1 go to the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let mut counts = vec![0u64; bins];
    for &v in values {
        let i = ((v * bins as f64) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: i as f64 / bins as f64,
            hi: (i + 1) as f64 / bins as f64,
            count,
        })
        .collect()
}
