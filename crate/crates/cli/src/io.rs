//! CSV and JSON plumbing. Matrices are comma-separated with a header row,
//! one observation per line.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use normalblock::ClusterAssignment;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::InputError;

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| InputError::new(format!("cannot read {}: {e}", path.display())))?;
    let cols = reader
        .headers()
        .map_err(|e| InputError::new(format!("{}: bad header: {e}", path.display())))?
        .len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| InputError::new(format!("{}: {e}", path.display())))?;
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                InputError::new(format!("{}: row {}, column {}: not a number: {field:?}", path.display(), i + 1, j + 1))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 || cols == 0 {
        return Err(InputError::new(format!("{} holds no data", path.display())).into());
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_matrix(path: &Path, prefix: &str, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record((1..=m.ncols()).map(|j| format!("{prefix}{j}")))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// One 1-based label per variable under a `cluster` header.
pub fn read_clusters(path: &Path) -> Result<Vec<usize>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| InputError::new(format!("cannot read {}: {e}", path.display())))?;
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| InputError::new(format!("{}: {e}", path.display())))?;
        let field = record.get(0).unwrap_or("").trim();
        let label: usize = field
            .parse()
            .map_err(|_| InputError::new(format!("{}: row {}: not a cluster label: {field:?}", path.display(), i + 1)))?;
        labels.push(label);
    }
    Ok(labels)
}

pub fn write_clusters(path: &Path, assignment: &ClusterAssignment) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["cluster"])?;
    for label in assignment.to_one_based() {
        w.write_record([label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| InputError::new(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| InputError::new(format!("{}: {e}", path.display())).into())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}
