//! Locale-independent CSV helpers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Shortest representation that parses back to the same `f64`.
///
/// Plain decimal for moderate magnitudes, exponent notation otherwise so
/// that tiny values do not expand into hundreds of digits.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-5..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Rows of a matrix as comma-separated lines, without a header.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str, context: &Path) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", context.display(), ln + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::invalid(format!(
                    "{}:{}: expected {} columns, found {}",
                    context.display(),
                    ln + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    Ok(crate::linalg::from_rows(&rows))
}

/// Small builder for headed CSV tables.
#[derive(Debug, Clone)]
pub struct CsvTable {
    header: Vec<String>,
    body: String,
}

/// One CSV cell.
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        CsvTable {
            header: header.into_iter().map(Into::into).collect(),
            body: String::new(),
        }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn columns(&self) -> usize {
        self.header.len()
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "CSV row width");
        for (j, cell) in row.into_iter().enumerate() {
            if j > 0 {
                self.body.push(',');
            }
            match cell {
                Cell::Num(x) => self.body.push_str(&fmt_f64(x)),
                Cell::Int(x) => {
                    let _ = write!(self.body, "{x}");
                }
                Cell::Text(s) => {
                    debug_assert!(!s.contains([',', '"', '\n']));
                    self.body.push_str(&s);
                }
            }
        }
        self.body.push('\n');
    }

    pub fn render(&self) -> String {
        format!("{}\n{}", self.header.join(","), self.body)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }
}
