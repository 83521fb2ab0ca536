//! Tabular output in CSV or JSON with a fixed number of significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::config::OutputFormat;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

/// `x` with `digits` significant digits in scientific notation.
pub fn format_number(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{:.*e}", digits.saturating_sub(1), x)
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn to_csv(&self, digits: usize) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match *c {
                    Cell::Int(i) => i.to_string(),
                    Cell::Num(x) => format_number(x, digits),
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self, digits: usize) -> Value {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = Map::new();
                for (name, c) in self.columns.iter().zip(row) {
                    let v = match *c {
                        Cell::Int(i) => Value::from(i),
                        Cell::Num(x) if x.is_finite() => {
                            Value::from(format_number(x, digits).parse::<f64>().unwrap_or(x))
                        }
                        Cell::Num(_) => Value::Null,
                    };
                    obj.insert(name.clone(), v);
                }
                Value::Object(obj)
            })
            .collect();
        Value::Array(rows)
    }

    /// Writes `<dir>/<stem>.csv` or `<dir>/<stem>.json`; returns the path.
    pub fn write(
        &self,
        dir: &Path,
        stem: &str,
        format: OutputFormat,
        digits: usize,
    ) -> Result<PathBuf, CliError> {
        let (path, text) = match format {
            OutputFormat::Csv => (dir.join(format!("{stem}.csv")), self.to_csv(digits)),
            OutputFormat::Json => {
                let mut s = serde_json::to_string_pretty(&self.to_json(digits))
                    .expect("table serializes");
                s.push('\n');
                (dir.join(format!("{stem}.json")), s)
            }
        };
        write_text(&path, &text)?;
        Ok(path)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("json serializes");
    s.push('\n');
    write_text(path, &s)
}
