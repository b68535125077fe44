//! CSV and JSON artifact writers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("{path}: {message}")]
pub struct IoError {
    pub path: PathBuf,
    pub message: String,
}

impl IoError {
    fn at(path: &Path, err: impl ToString) -> Self {
        Self {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_float(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// A header plus rows, written in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

pub fn emit_csv(table: &Table, path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| IoError::at(path, e))?;
    w.write_record(&table.header).map_err(|e| IoError::at(path, e))?;
    for row in &table.rows {
        w.write_record(row.iter().map(Cell::render)).map_err(|e| IoError::at(path, e))?;
    }
    w.flush().map_err(|e| IoError::at(path, e))
}

pub fn emit_summary<T: Serialize>(summary: &T, path: &Path) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(summary).map_err(|e| IoError::at(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| IoError::at(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::at(dir, e))
}
