//! Observed metric panels and their CSV form.
//!
//! CSV dialect: comma separated, first row holds the metric names, then one
//! row per timestep with one decimal value per metric. Values are written
//! with Rust's shortest round-trip float formatting so a write/read cycle is
//! lossless. No index or timestamp column; row order is time order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPanel {
    names: Vec<String>,
    /// `T x d`, one row per timestep.
    values: DenseMatrix,
}

impl MetricPanel {
    pub fn new(names: Vec<String>, values: DenseMatrix) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(Error::dim("MetricPanel names", values.cols(), names.len()));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite {
                term: "metric panel".into(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::invalid(format!("duplicate metric name `{n}`")));
            }
        }
        Ok(Self { names, values })
    }

    /// Panel with names `x0, x1, ...`.
    pub fn unnamed(values: DenseMatrix) -> Result<Self> {
        let names = (0..values.cols()).map(|i| format!("x{i}")).collect();
        Self::new(names, values)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn num_metrics(&self) -> usize {
        self.values.cols()
    }

    pub fn num_timesteps(&self) -> usize {
        self.values.rows()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, keep: &[usize]) -> Result<Self> {
        for &c in keep {
            if c >= self.num_metrics() {
                return Err(Error::OutOfRange {
                    index: c,
                    size: self.num_metrics(),
                });
            }
        }
        let values = DenseMatrix::from_fn(self.num_timesteps(), keep.len(), |t, j| self.values[(t, keep[j])]);
        Self::new(keep.iter().map(|&c| self.names[c].clone()).collect(), values)
    }

    /// Column-wise z-scores and the `(mean, std)` used. Constant columns
    /// keep unit scale.
    pub fn standardized(&self) -> (DenseMatrix, Vec<(f64, f64)>) {
        let (t, d) = (self.num_timesteps(), self.num_metrics());
        let stats: Vec<(f64, f64)> = (0..d)
            .map(|j| {
                let col = self.values.column(j);
                let mean = col.iter().sum::<f64>() / t as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
                let std = if var > 1e-24 { var.sqrt() } else { 1.0 };
                (mean, std)
            })
            .collect();
        let z = DenseMatrix::from_fn(t, d, |i, j| (self.values[(i, j)] - stats[j].0) / stats[j].1);
        (z, stats)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(out);
        w.write_record(&self.names).map_err(csv_io)?;
        let mut buf = Vec::with_capacity(self.num_metrics());
        for t in 0..self.num_timesteps() {
            buf.clear();
            buf.extend(self.values.row(t).iter().map(|v| format!("{v:?}")));
            w.write_record(&buf).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(input);
        let names: Vec<String> = r
            .headers()
            .map_err(|e| csv_error(1, 0, e))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if names.is_empty() || names.iter().any(String::is_empty) {
            return Err(Error::Csv {
                row: 1,
                column: 0,
                message: "header must list a non-empty name per column".into(),
            });
        }
        let d = names.len();
        let mut values = Vec::new();
        for (i, rec) in r.records().enumerate() {
            // 1-based line numbers; the header is line 1.
            let row = i + 2;
            let rec = rec.map_err(|e| csv_error(row, 0, e))?;
            if rec.len() != d {
                return Err(Error::Csv {
                    row,
                    column: rec.len().min(d) + 1,
                    message: format!("expected {d} fields, found {}", rec.len()),
                });
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Csv {
                    row,
                    column: j + 1,
                    message: format!("`{field}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Csv {
                        row,
                        column: j + 1,
                        message: format!("`{field}` is not finite"),
                    });
                }
                values.push(v);
            }
        }
        let t = values.len() / d;
        Self::new(names, DenseMatrix::from_vec(t, d, values)?)
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Csv {
            row: 0,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

fn csv_error(row: usize, column: usize, e: csv::Error) -> Error {
    Error::Csv {
        row,
        column,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_row_reports_position() {
        let text = "a,b\n1,2\n3\n";
        match MetricPanel::read_csv(text.as_bytes()) {
            Err(Error::Csv { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_reports_position() {
        let text = "a,b\n1,2\n3,x\n";
        match MetricPanel::read_csv(text.as_bytes()) {
            Err(Error::Csv { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lossless_roundtrip() {
        let values = DenseMatrix::from_rows(&[vec![0.1, -1e-300], vec![1.0 / 3.0, 12345.678]]).unwrap();
        let p = MetricPanel::new(vec!["cpu".into(), "lat".into()], values).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(MetricPanel::read_csv(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(MetricPanel::new(vec!["a".into(), "a".into()], DenseMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn standardization() {
        let p = MetricPanel::unnamed(DenseMatrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap()).unwrap();
        let (z, stats) = p.standardized();
        assert_eq!(stats[0], (2.0, 1.0));
        assert_eq!(z.column(0), vec![-1.0, 1.0]);
        assert_eq!(z.column(1), vec![0.0, 0.0]);
    }
}
