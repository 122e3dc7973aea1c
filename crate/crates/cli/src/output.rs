//! Atomic JSON/CSV writers. Floats use Rust's shortest round-trip
//! formatting, which is locale independent.

use std::fs;
use std::path::Path;

use iocl_core::matops::Matrix;
use iocl_core::sim;
use serde::Serialize;

use crate::error::CliResult;

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    sim::write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// One CSV file: header plus rows of already formatted fields.
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        sim::write_atomic(path, &bytes)?;
        Ok(())
    }
}

pub fn num(x: f64) -> String {
    x.to_string()
}

/// Long-format `prefix.., row, col, true, estimated` rows for two
/// same-shaped matrices.
pub fn push_matrix_pair(table: &mut Table, prefix: &[String], truth: &Matrix, estimate: &Matrix) {
    for i in 0..truth.nrows() {
        for j in 0..truth.ncols() {
            let mut row = prefix.to_vec();
            row.extend([i.to_string(), j.to_string(), num(truth[(i, j)]), num(estimate[(i, j)])]);
            table.push(row);
        }
    }
}
