//! Gaussian target parameters `N(m1, Sigma1)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Mean and symmetric positive-definite covariance of a Gaussian target.
///
/// The eigendecomposition of the covariance is computed once here and reused
/// by the population field and the transport baselines.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianJson {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidParameter("mean must be non-empty".into()));
        }
        if cov.len() != d || cov.iter().any(|row| row.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.len(),
            });
        }
        let cov = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        Self::from_matrix(DVector::from_vec(mean), cov)
    }

    pub fn from_matrix(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite Gaussian parameter".into()));
        }
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::NotPositiveDefinite(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let eig = SymmetricEigen::new(cov.clone());
        if let Some(min) = eig.eigenvalues.iter().cloned().reduce(f64::min) {
            if !(min > 0.0) {
                return Err(Error::NotPositiveDefinite(format!(
                    "smallest eigenvalue {min} is not positive"
                )));
            }
        }
        Ok(Self {
            mean,
            cov,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: GaussianJson = serde_json::from_str(s)?;
        Self::new(raw.mean, raw.cov)
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let d = self.dim();
        serde_json::to_value(GaussianJson {
            mean: self.mean.iter().copied().collect(),
            cov: (0..d).map(|i| (0..d).map(|j| self.cov[(i, j)]).collect()).collect(),
        })
        .expect("plain numeric data serializes")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Builds `Q diag(f(lambda)) Q^T` from the covariance eigenbasis.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let q = &self.eigenvectors;
        let d = self.dim();
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        DMatrix::from_fn(d, d, |i, j| {
            (0..d).map(|k| q[(i, k)] * fl[k] * q[(j, k)]).sum()
        })
    }

    /// `log N(y; m1, Sigma1)`.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        crate::linalg::check_dim(self.dim(), y)?;
        let d = self.dim();
        let centered = DVector::from_column_slice(y) - &self.mean;
        let proj = self.eigenvectors.transpose() * centered;
        let quad: f64 = proj
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(p, l)| p * p / l)
            .sum();
        let log_det: f64 = self.eigenvalues.iter().map(|l| l.ln()).sum();
        Ok(-0.5 * quad - 0.5 * (log_det + d as f64 * (2.0 * std::f64::consts::PI).ln()))
    }
}
