//! Comma-separated numeric grids.
//!
//! A grid file starts with a dimension header: a single `L` for square
//! matrices, or `rows,cols` otherwise. Each following line is one row.
//! Values use the shortest round-trip decimal form, so write/read is exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn grid_to_text(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    if m.nrows() == m.ncols() {
        let _ = writeln!(out, "{}", m.nrows());
    } else {
        let _ = writeln!(out, "{},{}", m.nrows(), m.ncols());
    }
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

pub fn grid_from_text(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Format("empty grid file".into()))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|f| f.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format(format!("bad grid header `{header}`")))?;
    let (rows, cols) = match dims.as_slice() {
        [n] => (*n, *n),
        [r, c] => (*r, *c),
        _ => return Err(Error::Format(format!("bad grid header `{header}`"))),
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen_rows = 0;
    for (i, line) in lines.enumerate() {
        let before = data.len();
        for f in line.split(',') {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("grid row {}: bad value `{f}`", i + 1)))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::Format(format!(
                "grid row {} has {} values, expected {cols}",
                i + 1,
                data.len() - before
            )));
        }
        seen_rows += 1;
    }
    if seen_rows != rows {
        return Err(Error::Format(format!("grid has {seen_rows} rows, header says {rows}")));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn read_grid(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    grid_from_text(&text)
}

pub fn write_grid(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, grid_to_text(m)).map_err(|e| Error::io(path, e))
}
