//! Affine conditional flows `psi_t(z | x) = m_t(x) + sigma_t(x) z`.
//!
//! A schedule is given by `m`, `sigma` and their exact time derivatives. The
//! conditional velocity that transports `z` along the path is affine in `z`:
//! `v(t, z | x) = a_t(x) z + b_t(x)` with `a = sigma_dot / sigma` and
//! `b = m_dot - a m`.

use std::fmt;
use std::sync::Arc;

use crate::kernel::SourceKernel;
use crate::linalg::check_dim;
use crate::{Error, Result};

pub type VectorFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A user-supplied schedule. Boundary conditions are not checked on
/// construction; call [`AffineSchedule::check_boundary`] to validate.
#[derive(Clone)]
pub struct CustomSchedule {
    name: String,
    m: VectorFn,
    m_dot: VectorFn,
    sigma: ScalarFn,
    sigma_dot: ScalarFn,
}

impl CustomSchedule {
    pub fn new(
        name: impl Into<String>,
        m: VectorFn,
        m_dot: VectorFn,
        sigma: ScalarFn,
        sigma_dot: ScalarFn,
    ) -> Self {
        Self {
            name: name.into(),
            m,
            m_dot,
            sigma,
            sigma_dot,
        }
    }

    /// `m_t(x) = t^p x`, `sigma_t = 1 - (1 - sigma_min) t^q` with `p, q >= 1`.
    /// `p = q = 1` reproduces the regularized rectified flow.
    pub fn polynomial(m_power: f64, sigma_power: f64, sigma_min: f64) -> Result<Self> {
        if !(m_power >= 1.0 && sigma_power >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "polynomial schedule powers must be >= 1, got ({m_power}, {sigma_power})"
            )));
        }
        check_sigma_min(sigma_min)?;
        let (p, q, c) = (m_power, sigma_power, 1.0 - sigma_min);
        Ok(Self::new(
            format!("polynomial(p={p}, q={q}, sigma_min={sigma_min})"),
            Arc::new(move |t, x, out| {
                let s = t.powf(p);
                out.iter_mut().zip(x).for_each(|(o, xi)| *o = s * xi);
            }),
            Arc::new(move |t, x, out| {
                let s = p * t.powf(p - 1.0);
                out.iter_mut().zip(x).for_each(|(o, xi)| *o = s * xi);
            }),
            Arc::new(move |t, _| 1.0 - c * t.powf(q)),
            Arc::new(move |t, _| -c * q * t.powf(q - 1.0)),
        ))
    }
}

impl fmt::Debug for CustomSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSchedule")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum AffineSchedule {
    /// `m_t(x) = t x`, `sigma_t = 1 - t`.
    RectifiedFlow,
    /// `m_t(x) = t x`, `sigma_t = 1 - (1 - sigma_min) t`.
    RegularizedRectifiedFlow { sigma_min: f64 },
    Custom(CustomSchedule),
}

fn check_sigma_min(sigma_min: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sigma_min) {
        return Err(Error::InvalidParameter(format!(
            "sigma_min must lie in [0, 1), got {sigma_min}"
        )));
    }
    Ok(())
}

const BOUNDARY_TOL: f64 = 1e-12;

impl AffineSchedule {
    pub fn rectified_flow() -> Self {
        let s = AffineSchedule::RectifiedFlow;
        s.check_boundary(&builtin_probes())
            .expect("rectified flow satisfies its boundary conditions");
        s
    }

    pub fn regularized(sigma_min: f64) -> Result<Self> {
        check_sigma_min(sigma_min)?;
        let s = AffineSchedule::RegularizedRectifiedFlow { sigma_min };
        s.check_boundary(&builtin_probes())?;
        Ok(s)
    }

    pub fn custom(schedule: CustomSchedule) -> Self {
        AffineSchedule::Custom(schedule)
    }

    pub fn name(&self) -> String {
        match self {
            AffineSchedule::RectifiedFlow => "rf".into(),
            AffineSchedule::RegularizedRectifiedFlow { sigma_min } => {
                format!("rf_regularized(sigma_min={sigma_min})")
            }
            AffineSchedule::Custom(c) => c.name.clone(),
        }
    }

    /// For built-in schedules `m_t(x) = t x` and `sigma_t = 1 - c t`; returns
    /// `c`. Evaluation code uses this to skip the per-point schedule calls.
    pub(crate) fn linear_rate(&self) -> Option<f64> {
        match self {
            AffineSchedule::RectifiedFlow => Some(1.0),
            AffineSchedule::RegularizedRectifiedFlow { sigma_min } => Some(1.0 - sigma_min),
            AffineSchedule::Custom(_) => None,
        }
    }

    /// Writes `m_t(x)` and `m_dot_t(x)` into the buffers and returns
    /// `(sigma_t(x), sigma_dot_t(x))`.
    #[inline]
    pub fn eval_into(&self, t: f64, x: &[f64], m: &mut [f64], m_dot: &mut [f64]) -> (f64, f64) {
        match self.linear_rate() {
            Some(c) => {
                for ((mi, di), xi) in m.iter_mut().zip(m_dot.iter_mut()).zip(x) {
                    *mi = t * xi;
                    *di = *xi;
                }
                (1.0 - c * t, -c)
            }
            None => {
                let AffineSchedule::Custom(s) = self else {
                    unreachable!()
                };
                (s.m)(t, x, m);
                (s.m_dot)(t, x, m_dot);
                ((s.sigma)(t, x), (s.sigma_dot)(t, x))
            }
        }
    }

    pub fn m(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let (mut m, mut md) = (vec![0.0; x.len()], vec![0.0; x.len()]);
        self.eval_into(t, x, &mut m, &mut md);
        m
    }

    pub fn m_dot(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let (mut m, mut md) = (vec![0.0; x.len()], vec![0.0; x.len()]);
        self.eval_into(t, x, &mut m, &mut md);
        md
    }

    pub fn sigma(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            AffineSchedule::Custom(s) => (s.sigma)(t, x),
            _ => 1.0 - self.linear_rate().unwrap() * t,
        }
    }

    pub fn sigma_dot(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            AffineSchedule::Custom(s) => (s.sigma_dot)(t, x),
            _ => -self.linear_rate().unwrap(),
        }
    }

    /// Returns `(a, b)` such that `v(t, z | x) = a z + b`.
    pub fn affine_coefficients(&self, t: f64, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = x.len();
        let (mut m, mut b) = (vec![0.0; d], vec![0.0; d]);
        let (sigma, sigma_dot) = self.eval_into(t, x, &mut m, &mut b);
        if !(sigma > 0.0) {
            return Err(Error::NonPositiveSigma { t, sigma });
        }
        let a = sigma_dot / sigma;
        for (bi, mi) in b.iter_mut().zip(&m) {
            *bi -= mi * a;
        }
        Ok((a, b))
    }

    /// `log p_t(z | x) = -d log sigma_t(x) + log K((z - m_t(x)) / sigma_t(x))`.
    pub fn conditional_log_density(
        &self,
        kernel: &SourceKernel,
        t: f64,
        z: &[f64],
        x: &[f64],
    ) -> Result<f64> {
        let d = kernel.dim();
        check_dim(d, z)?;
        check_dim(d, x)?;
        let (mut m, mut md) = (vec![0.0; d], vec![0.0; d]);
        let (sigma, _) = self.eval_into(t, x, &mut m, &mut md);
        if !(sigma > 0.0) {
            return Err(Error::NonPositiveSigma { t, sigma });
        }
        let r2 = crate::linalg::dist_sq(z, &m) / (sigma * sigma);
        Ok(-(d as f64) * sigma.ln() + kernel.log_density_radial(r2))
    }

    /// Checks `m_0 = 0`, `m_1 = x`, `sigma_0 = 1`, `sigma_1 >= 0` and
    /// `sigma_t > 0` on `[0, 1)` at the given probe points.
    pub fn check_boundary(&self, probes: &[Vec<f64>]) -> Result<()> {
        let fail = |what: String| Err(Error::InvalidParameter(format!("{}: {what}", self.name())));
        for x in probes {
            let m0 = self.m(0.0, x);
            if m0.iter().any(|v| v.abs() > BOUNDARY_TOL) {
                return fail(format!("m(0, x) != 0 at x = {x:?}"));
            }
            let m1 = self.m(1.0, x);
            if m1.iter().zip(x).any(|(a, b)| (a - b).abs() > BOUNDARY_TOL * (1.0 + b.abs())) {
                return fail(format!("m(1, x) != x at x = {x:?}"));
            }
            if (self.sigma(0.0, x) - 1.0).abs() > BOUNDARY_TOL {
                return fail(format!("sigma(0, x) != 1 at x = {x:?}"));
            }
            if !(self.sigma(1.0, x) >= -BOUNDARY_TOL) {
                return fail(format!("sigma(1, x) < 0 at x = {x:?}"));
            }
            for k in 0..64 {
                let t = k as f64 / 64.0;
                if !(self.sigma(t, x) > 0.0) {
                    return fail(format!("sigma({t}, x) <= 0 at x = {x:?}"));
                }
            }
        }
        Ok(())
    }
}

fn builtin_probes() -> Vec<Vec<f64>> {
    vec![vec![0.0, 0.0], vec![1.0, -2.0], vec![-3.5, 0.25]]
}
