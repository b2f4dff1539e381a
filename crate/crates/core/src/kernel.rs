//! Source densities `K` and sampling from them.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::{rng, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    StandardGaussian,
    /// Spherically symmetric multivariate Student-t with `dof` degrees of
    /// freedom and identity scale. Its norm has tail index `dof`.
    StudentT { dof: f64 },
}

/// A strictly positive, radially symmetric source density on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceKernel {
    kind: KernelKind,
    dim: usize,
    log_norm: f64,
}

impl SourceKernel {
    pub fn standard_gaussian(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            kind: KernelKind::StandardGaussian,
            dim,
            log_norm: -0.5 * dim as f64 * LN_2PI,
        })
    }

    pub fn student_t(dim: usize, dof: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(dof.is_finite() && dof > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Student-t degrees of freedom must be positive, got {dof}"
            )));
        }
        let d = dim as f64;
        let log_norm = ln_gamma(0.5 * (dof + d))
            - ln_gamma(0.5 * dof)
            - 0.5 * d * (dof * std::f64::consts::PI).ln();
        Ok(Self {
            kind: KernelKind::StudentT { dof },
            dim,
            log_norm,
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Tail index of `||X||` under this kernel, `None` for the Gaussian.
    pub fn tail_index(&self) -> Option<f64> {
        match self.kind {
            KernelKind::StandardGaussian => None,
            KernelKind::StudentT { dof } => Some(dof),
        }
    }

    /// `log K(u)` expressed through `r2 = ||u||^2`.
    #[inline]
    pub fn log_density_radial(&self, r2: f64) -> f64 {
        self.log_norm + self.log_shape(r2)
    }

    /// `log K(u)` up to the additive normalizing constant.
    #[inline]
    pub(crate) fn log_shape(&self, r2: f64) -> f64 {
        match self.kind {
            KernelKind::StandardGaussian => -0.5 * r2,
            KernelKind::StudentT { dof } => {
                -0.5 * (dof + self.dim as f64) * (r2 / dof).ln_1p()
            }
        }
    }

    /// `d log K(u) / d u = factor(r2) * u`; returns the scalar factor.
    #[inline]
    pub(crate) fn grad_factor(&self, r2: f64) -> f64 {
        match self.kind {
            KernelKind::StandardGaussian => -1.0,
            KernelKind::StudentT { dof } => -(dof + self.dim as f64) / (dof + r2),
        }
    }

    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        crate::linalg::check_dim(self.dim, u)?;
        Ok(self.log_density_radial(crate::linalg::norm_sq(u)))
    }

    /// Gradient of `log K` at `u`.
    pub fn grad_log_density(&self, u: &[f64]) -> Result<Vec<f64>> {
        crate::linalg::check_dim(self.dim, u)?;
        let f = self.grad_factor(crate::linalg::norm_sq(u));
        Ok(u.iter().map(|x| f * x).collect())
    }

    /// Draws the point addressed by `(seed, index)`.
    pub fn sample_point(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, index);
        self.sample_with(&mut rng)
    }

    fn sample_with<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut *rng))
            .collect();
        if let KernelKind::StudentT { dof } = self.kind {
            let chi2 = ChiSquared::new(dof).expect("dof validated at construction");
            let scale = (chi2.sample(rng) / dof).sqrt();
            for c in &mut x {
                *c /= scale;
            }
        }
        x
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    Ok(())
}

/// Draws `count` i.i.d. points from `kernel`. Point `j` comes from stream
/// `(seed, j)`, so any prefix of the output is reproducible on its own.
pub fn sample_source(kernel: &SourceKernel, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    Ok((0..count as u64)
        .map(|j| kernel.sample_point(seed, j))
        .collect())
}
