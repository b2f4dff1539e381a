//! Fixed training sets.

use std::io::Read;
use std::path::Path;

use crate::linalg::norm;
use crate::{Error, Result};

/// A fixed set of `N >= 1` points in `R^d`, stored row-major.
///
/// The maximum Euclidean norm `M` is cached at construction because every
/// energy bound in the crate depends on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    data: Vec<f64>,
    len: usize,
    dim: usize,
    max_norm: f64,
}

impl Dataset {
    /// Builds a dataset from a list of points.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::InvalidDataset("dataset is empty".into()));
        };
        let dim = first.len();
        let mut data = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::InvalidDataset(format!(
                    "row {i} has {} columns, expected {dim}",
                    p.len()
                )));
            }
            data.extend_from_slice(p);
        }
        Self::from_flat(dim, data)
    }

    /// Builds a dataset from a row-major buffer of `N * dim` coordinates.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDataset("dimension must be positive".into()));
        }
        if data.is_empty() {
            return Err(Error::InvalidDataset("dataset is empty".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::InvalidDataset(format!(
                "buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite coordinate in row {}",
                pos / dim
            )));
        }
        let len = data.len() / dim;
        let max_norm = data.chunks_exact(dim).map(norm).fold(0.0, f64::max);
        Ok(Self {
            data,
            len,
            dim,
            max_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false; datasets hold at least one point.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `M = max_i ||x_i||`.
    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Loads a headerless CSV file with one point per row.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut points = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let point = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|_| {
                        Error::InvalidDataset(format!("row {row}: cannot parse {field:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            points.push(point);
        }
        Self::new(points)
    }

    /// Loads a JSON array of arrays.
    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let points: Vec<Vec<f64>> = serde_json::from_str(s)?;
        Self::new(points)
    }

    /// Loads CSV or JSON depending on the file extension.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_path(path),
            _ => Self::from_csv_path(path),
        }
    }

    /// Writes the dataset as headerless CSV with round-trip precision.
    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        for p in self.points() {
            let row: Vec<String> = p.iter().map(|x| format!("{x:.16e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}
