//! Row-major storage for samples in R^d.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A list of points of a common dimension, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("points must have dimension >= 1"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::input(format!(
                "{} coordinates do not split into rows of length {dim}",
                coords.len()
            )));
        }
        Ok(Points { dim, coords })
    }

    pub fn empty(dim: usize) -> Self {
        assert!(dim > 0, "points must have dimension >= 1");
        Points {
            dim,
            coords: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        assert!(dim > 0, "points must have dimension >= 1");
        Points {
            dim,
            coords: Vec::with_capacity(dim * rows),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::input("cannot infer dimension from zero rows"))?;
        let dim = first.as_ref().len();
        let mut out = Points::new(dim, Vec::with_capacity(dim * rows.len()))?;
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::input(format!(
                    "row {i} has {} coordinates, expected {dim}",
                    r.len()
                )));
            }
            out.coords.extend_from_slice(r);
        }
        Ok(out)
    }

    /// Convenience for one-dimensional data.
    pub fn from_scalars(xs: &[f64]) -> Self {
        Points {
            dim: 1,
            coords: xs.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.dim, "pushed point has wrong dimension");
        self.coords.extend_from_slice(p);
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }

    /// Coordinate-wise mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.iter() {
            for (acc, v) in m.iter_mut().zip(p) {
                *acc += v;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Writes one point per line, `dim` comma-separated columns, no header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for p in self.iter() {
            w.write_record(p.iter().map(|v| format!("{v:?}")))
                .map_err(|e| Error::input(format!("csv write failed: {e}")))?;
        }
        w.flush()
            .map_err(|e| Error::input(format!("csv flush failed: {e}")))?;
        Ok(())
    }

    /// Parses the format written by [`Points::write_csv`]. A leading header
    /// row is skipped when its first field is not numeric.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(input);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::input(format!("csv parse error: {e}")))?;
            let parsed: std::result::Result<Vec<f64>, _> =
                rec.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if line == 0 => continue,
                Err(e) => {
                    return Err(Error::input(format!(
                        "csv line {}: non-numeric field ({e})",
                        line + 1
                    )))
                }
            }
        }
        Points::from_rows(&rows)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Points::read_csv(std::io::BufReader::new(f)).map_err(|e| match e {
            Error::Input(message) => Error::Format {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }
}
