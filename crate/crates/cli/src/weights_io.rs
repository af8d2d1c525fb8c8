//! Headerless numeric matrices: weights files and designed inputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use nalgebra::{DMatrix, DVector};

use crate::dataset::{detect_delimiter, DatasetError};

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(detect_delimiter(text))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::MalformedCsv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| DatasetError::MalformedCsv {
                    line,
                    message: format!("{f:?} is not a finite number"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DatasetError::TooFewRows(0));
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Weight matrix `W` (inputs × hidden) and, with `bias`, the trailing bias
/// row.
pub fn read_weights(path: &Path, bias: bool) -> Result<(DMatrix<f64>, Option<DVector<f64>>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m = parse_matrix(&text).with_context(|| format!("parsing {}", path.display()))?;
    split_bias(m, bias)
}

pub fn split_bias(m: DMatrix<f64>, bias: bool) -> Result<(DMatrix<f64>, Option<DVector<f64>>)> {
    if !bias {
        return Ok((m, None));
    }
    ensure!(m.nrows() >= 2, "a weights file with a bias row needs at least two rows");
    let rows = m.nrows() - 1;
    let b = m.row(rows).transpose();
    Ok((m.rows(0, rows).into_owned(), Some(b)))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = Vec::new();
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_row_split() {
        let m = parse_matrix("1,2,3\n4,5,6\n0.5,-1,2\n").unwrap();
        let (w, b) = split_bias(m.clone(), true).unwrap();
        assert_eq!(w.shape(), (2, 3));
        assert_eq!(b.unwrap().as_slice(), &[0.5, -1.0, 2.0]);
        assert_eq!(split_bias(m, false).unwrap().0.shape(), (3, 3));
    }

    #[test]
    fn ragged_and_bad_fields() {
        assert!(matches!(parse_matrix("1,2\n3\n"), Err(DatasetError::MalformedCsv { line: 2, .. })));
        assert!(matches!(parse_matrix("1;x\n"), Err(DatasetError::MalformedCsv { line: 1, .. })));
        assert!(parse_matrix("").is_err());
    }

    #[test]
    fn write_then_read_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 2, &[0.1, -1.0 / 3.0, 1e-300, 7.0]);
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_weights(&p, false).unwrap().0, m);
    }
}
