//! Gaussian optimal-transport baselines and the constants of the energy
//! concentration bounds.
//!
//! With source `N(0, I)` and target `N(m1, Sigma1)` the Monge map is
//! `T0(x) = m1 + Sigma1^{1/2} x`, which is also where the population
//! rectified flow ends up. Everything here is closed form.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::linalg::check_dim;
use crate::{AffineSchedule, Dataset, Error, GaussianParams, Result};

const EIGEN_FLOOR: f64 = 1e-12;
const EIGEN_MIN: f64 = 1e-8;
const RHO_ZERO: f64 = 1e-15;

/// Precomputed square roots and tail constants for a Gaussian target.
#[derive(Debug, Clone)]
pub struct GaussianTransport {
    target: GaussianParams,
    sqrt_cov: DMatrix<f64>,
    inv_sqrt_cov: DMatrix<f64>,
    rho: f64,
    tail_c: Option<f64>,
}

impl GaussianTransport {
    pub fn new(target: GaussianParams) -> Result<Self> {
        if let Some(bad) = target.eigenvalues().iter().find(|&&l| l < EIGEN_MIN) {
            return Err(Error::NotPositiveDefinite(format!(
                "eigenvalue {bad} below {EIGEN_MIN}"
            )));
        }
        let sqrt_cov = target.spectral_map(|l| l.max(EIGEN_FLOOR).sqrt());
        let inv_sqrt_cov = target.spectral_map(|l| 1.0 / l.max(EIGEN_FLOOR).sqrt());
        let mut rho = target
            .eigenvalues()
            .iter()
            .map(|l| (l.sqrt() - 1.0).powi(2))
            .fold(0.0, f64::max);
        if rho < RHO_ZERO {
            rho = 0.0;
        }
        let tail_c = (rho > 0.0).then(|| {
            let d = target.dim() as f64;
            2f64.powf(0.5 * d) * (target.mean().norm_squared() / (2.0 * rho)).exp()
        });
        Ok(Self {
            target,
            sqrt_cov,
            inv_sqrt_cov,
            rho,
            tail_c,
        })
    }

    pub fn target(&self) -> &GaussianParams {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn sqrt_cov(&self) -> &DMatrix<f64> {
        &self.sqrt_cov
    }

    pub fn inv_sqrt_cov(&self) -> &DMatrix<f64> {
        &self.inv_sqrt_cov
    }

    /// `max_i (sqrt(lambda_i) - 1)^2`; zero exactly for an identity covariance.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `2^{d/2} exp(||m1||^2 / (2 rho))`, or `None` when `rho = 0`.
    pub fn tail_constant(&self) -> Option<f64> {
        self.tail_c
    }

    /// `T0(x) = m1 + Sigma1^{1/2} x`.
    pub fn monge_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x)?;
        let y = self.target.mean() + &self.sqrt_cov * DVector::from_column_slice(x);
        Ok(y.as_slice().to_vec())
    }

    /// `R^{-1}(y) = Sigma1^{-1/2} (y - m1)`.
    pub fn inverse_map(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), y)?;
        let x = &self.inv_sqrt_cov * (DVector::from_column_slice(y) - self.target.mean());
        Ok(x.as_slice().to_vec())
    }

    /// Kinetic energy of the straight transport path ending at `y`:
    /// `||y - R^{-1}(y)||^2`.
    pub fn ot_energy(&self, y: &[f64]) -> Result<f64> {
        let x = self.inverse_map(y)?;
        Ok(crate::linalg::dist_sq(y, &x))
    }

    /// `E(y)/2 + log p1(y) - C(y)`, which vanishes identically.
    pub fn energy_identity_residual(&self, y: &[f64]) -> Result<f64> {
        let half_e = 0.5 * self.ot_energy(y)?;
        let log_p = self.target.log_density(y)?;
        Ok(half_e + log_p - self.identity_offset(y)?)
    }

    /// `C(y) = y^T (I - 2 Sigma1^{-1/2}) y / 2 + m1^T Sigma1^{-1/2} y - log det(2 pi Sigma1) / 2`.
    pub fn identity_offset(&self, y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), y)?;
        let yv = DVector::from_column_slice(y);
        let sy = &self.inv_sqrt_cov * &yv;
        let d = self.dim() as f64;
        let log_det: f64 = self.target.eigenvalues().iter().map(|l| l.ln()).sum::<f64>()
            + d * (2.0 * std::f64::consts::PI).ln();
        Ok(0.5 * (yv.norm_squared() - 2.0 * yv.dot(&sy)) + self.target.mean().dot(&sy)
            - 0.5 * log_det)
    }

    /// `min(1, C exp(-u / (4 rho)))`, an upper bound on `P(E(Y) >= u)`.
    pub fn exp_tail_bound(&self, u: f64) -> Result<f64> {
        let c = self.tail_c.ok_or_else(|| {
            Error::Domain("tail bound requires a covariance different from the identity".into())
        })?;
        if !(u > 0.0) {
            return Err(Error::Domain(format!("threshold must be positive, got {u}")));
        }
        Ok((c * (-u / (4.0 * self.rho)).exp()).min(1.0))
    }

    /// `W2^2(N(0, I), N(m1, Sigma1)) = ||m1||^2 + tr Sigma1 + d - 2 tr Sigma1^{1/2}`.
    pub fn w2_squared(&self) -> f64 {
        let d = self.dim() as f64;
        let tr: f64 = self.target.eigenvalues().iter().sum();
        let tr_sqrt: f64 = self.target.eigenvalues().iter().map(|l| l.sqrt()).sum();
        self.target.mean().norm_squared() + tr + d - 2.0 * tr_sqrt
    }
}

/// Constants of the exponential concentration bound for a Gaussian source
/// pushed through the empirical rectified flow.
///
/// For `u >= u_t`, `P(K_t >= u) <= cap_c_t * exp(-c_t * u)`, and for
/// `u >= u_horizon`, `P(E_T >= u) <= cap_c_horizon * exp(-c_horizon * u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpTailConstants {
    pub t: f64,
    pub horizon: f64,
    pub c_t: f64,
    pub cap_c_t: f64,
    pub u_t: f64,
    pub c_horizon: f64,
    pub cap_c_horizon: f64,
    pub u_horizon: f64,
    pub c3: f64,
}

impl ExpTailConstants {
    pub fn new(dataset: &Dataset, t: f64, horizon: f64) -> Result<Self> {
        if !(horizon < 1.0) {
            return Err(Error::Domain(format!("horizon must be below 1, got {horizon}")));
        }
        if !(0.0 <= t && t <= horizon) {
            return Err(Error::Domain(format!("need 0 <= t <= T, got t = {t}, T = {horizon}")));
        }
        let m2 = dataset.max_norm().powi(2);
        let d = dataset.dim() as f64;
        let c3 = c3(horizon)?;
        let cap_c = (m2 / 16.0).exp();
        Ok(Self {
            t,
            horizon,
            c_t: (1.0 - t).powi(4) / 32.0,
            cap_c_t: cap_c,
            u_t: 2.0 * (1.0 - t).powi(-4) * (2.0 * d + m2),
            c_horizon: 3.0 / (32.0 * ((1.0 - horizon).powi(-3) - 1.0)),
            cap_c_horizon: cap_c,
            u_horizon: c3 * (2.0 * d + m2),
            c3,
        })
    }

    /// Bound on `P(K_t >= u)`; `None` below the validity threshold.
    pub fn kinetic_bound(&self, u: f64) -> Option<f64> {
        (u >= self.u_t).then(|| (self.cap_c_t * (-self.c_t * u).exp()).min(1.0))
    }

    /// Bound on `P(E_T >= u)`; `None` below the validity threshold.
    pub fn energy_bound(&self, u: f64) -> Option<f64> {
        (u >= self.u_horizon).then(|| (self.cap_c_horizon * (-self.c_horizon * u).exp()).min(1.0))
    }
}

/// `(2/3)((1 - T)^{-3} - 1) = int_0^T 2 (1 - t)^{-4} dt`.
pub fn c3(horizon: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&horizon) {
        return Err(Error::Domain(format!("horizon must lie in [0, 1), got {horizon}")));
    }
    Ok(2.0 / 3.0 * ((1.0 - horizon).powi(-3) - 1.0))
}

/// Pathwise bound `E_T <= c3(T) (||x0||^2 + M^2)` for rectified-flow trajectories.
pub fn rf_energy_bound(x0: &[f64], max_norm: f64, horizon: f64) -> Result<f64> {
    Ok(c3(horizon)? * (crate::linalg::norm_sq(x0) + max_norm * max_norm))
}

/// `E[exp(a W + b W^2)]` for `W ~ N(0, 1)`.
pub fn gaussian_mgf(a: f64, b: f64) -> Result<f64> {
    if !(b < 0.5) {
        return Err(Error::Domain(format!("need b < 1/2, got {b}")));
    }
    let s = 1.0 - 2.0 * b;
    Ok((a * a / (2.0 * s)).exp() / s.sqrt())
}

/// `exp(-s d / 16)`, an upper bound on `P(||X||^2 / d >= s)` for `X ~ N(0, I_d)`.
pub fn chisq_tail_bound(s: f64, d: usize) -> Result<f64> {
    if !(s >= 2.0) {
        return Err(Error::Domain(format!("need s >= 2, got {s}")));
    }
    Ok((-s * d as f64 / 16.0).exp())
}

/// Linear-growth constants of an affine empirical field on `[0, T]`.
///
/// `a_max` and `b_max` bound `|a_t(x_i)|` and `||b_t(x_i)||`. The rest follow
/// from Gronwall: `||psi_t|| <= c1 ||x0|| + c2`, `||v|| <= c3 ||x0|| + c4`,
/// `K_t <= c_k (||x0||^2 + 1)` and `E_T <= c_e (||x0||^2 + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineGrowthConstants {
    pub horizon: f64,
    pub a_max: f64,
    pub b_max: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c_k: f64,
    pub c_e: f64,
}

const GROWTH_GRID: usize = 4096;

impl AffineGrowthConstants {
    pub fn new(schedule: &AffineSchedule, dataset: &Dataset, horizon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&horizon) {
            return Err(Error::Domain(format!("horizon must lie in [0, 1), got {horizon}")));
        }
        let (a_max, b_max) = match schedule.linear_rate() {
            // |a| = c / sigma and ||b_i|| = ||x_i|| / sigma, largest at T
            Some(c) => {
                let sigma = schedule.sigma(horizon, dataset.point(0));
                (c / sigma, dataset.max_norm() / sigma)
            }
            None => {
                let (mut a_max, mut b_max) = (0.0f64, 0.0f64);
                for k in 0..=GROWTH_GRID {
                    let t = horizon * k as f64 / GROWTH_GRID as f64;
                    for x in dataset.points() {
                        let (a, b) = schedule.affine_coefficients(t, x)?;
                        a_max = a_max.max(a.abs());
                        b_max = b_max.max(crate::linalg::norm(&b));
                    }
                }
                (a_max, b_max)
            }
        };
        Ok(Self::from_rates(a_max, b_max, horizon))
    }

    pub fn from_rates(a_max: f64, b_max: f64, horizon: f64) -> Self {
        let c1 = (a_max * horizon).exp();
        let c2 = if a_max > 0.0 {
            b_max * (c1 - 1.0) / a_max
        } else {
            b_max * horizon
        };
        let c3 = a_max * c1;
        let c4 = a_max * c2 + b_max;
        let c_k = 2.0 * c3.powi(2).max(c4.powi(2));
        Self {
            horizon,
            a_max,
            b_max,
            c1,
            c2,
            c3,
            c4,
            c_k,
            c_e: horizon * c_k,
        }
    }

    pub fn velocity_bound(&self, z: &[f64]) -> f64 {
        self.a_max * crate::linalg::norm(z) + self.b_max
    }

    pub fn energy_bound(&self, x0: &[f64]) -> f64 {
        self.c_e * (crate::linalg::norm_sq(x0) + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{sample_source, SourceKernel};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn diag41(m: [f64; 2]) -> GaussianTransport {
        GaussianTransport::new(
            GaussianParams::new(m.to_vec(), vec![vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        )
        .unwrap()
    }

    fn scalar(var: f64) -> GaussianTransport {
        GaussianTransport::new(GaussianParams::new(vec![0.0], vec![vec![var]]).unwrap()).unwrap()
    }

    fn random_spd(rng: &mut impl Rng, d: usize) -> GaussianParams {
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = a.qr().q();
        let l = DMatrix::from_diagonal(&DVector::from_fn(d, |_, _| rng.random_range(0.25..9.0)));
        let mut cov = &q * l * q.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
        let mean = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        GaussianParams::from_matrix(mean, cov).unwrap()
    }

    #[test]
    fn square_roots_are_consistent() {
        let mut rng = crate::rng::stream(3, 0);
        for d in 1..=5 {
            let gt = GaussianTransport::new(random_spd(&mut rng, d)).unwrap();
            let s = gt.sqrt_cov();
            assert!((s - s.transpose()).abs().max() < 1e-12);
            assert!((s * s - gt.target().cov()).abs().max() < 1e-10);
            assert!((gt.inv_sqrt_cov() * s - DMatrix::identity(d, d)).abs().max() < 1e-10);
        }
    }

    #[test]
    fn monge_and_inverse_examples() {
        let gt = diag41([1.0, 0.0]);
        assert_eq!(gt.monge_map(&[1.0, 1.0]).unwrap(), vec![3.0, 1.0]);
        assert_eq!(gt.inverse_map(&[3.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        let id = GaussianTransport::new(
            GaussianParams::new(vec![0.0; 2], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(id.monge_map(&[0.3, -2.0]).unwrap(), vec![0.3, -2.0]);
        assert_eq!(id.rho(), 0.0);
        assert!(id.tail_constant().is_none());
        assert!(id.exp_tail_bound(3.0).is_err());
        assert_eq!(id.ot_energy(&[5.0, 1.0]).unwrap(), 0.0);
        assert_eq!(id.w2_squared(), 0.0);
    }

    #[test]
    fn round_trip() {
        let mut rng = crate::rng::stream(4, 0);
        let gt = GaussianTransport::new(random_spd(&mut rng, 4)).unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let back = gt.inverse_map(&gt.monge_map(&x).unwrap()).unwrap();
            assert!(crate::linalg::dist_sq(&x, &back).sqrt() < 1e-10);
        }
    }

    #[test]
    fn energy_examples() {
        let gt = scalar(4.0);
        assert!((gt.ot_energy(&[2.0]).unwrap() - 1.0).abs() < 1e-15);
        for y in [-3.0, 0.5, 7.0] {
            assert!((gt.ot_energy(&[y]).unwrap() - y * y / 4.0).abs() < 1e-13);
        }
        let offset = gt.identity_offset(&[2.0]).unwrap();
        assert!((offset + 0.5 * (8.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        assert!(gt.energy_identity_residual(&[2.0]).unwrap().abs() < 1e-14);
    }

    #[test]
    fn energy_identity_on_random_targets() {
        let mut rng = crate::rng::stream(5, 0);
        for d in 1..=5 {
            let gt = GaussianTransport::new(random_spd(&mut rng, d)).unwrap();
            for _ in 0..200 {
                let y: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
                let r = gt.energy_identity_residual(&y).unwrap();
                assert!(r.abs() <= 1e-8 * (1.0 + crate::linalg::norm_sq(&y)), "{r}");
            }
        }
    }

    #[test]
    fn tail_constants_example() {
        let gt = diag41([0.0, 0.0]);
        assert!((gt.rho() - 1.0).abs() < 1e-15);
        assert!((gt.tail_constant().unwrap() - 2.0).abs() < 1e-14);
        let b = |u: f64| gt.exp_tail_bound(u).unwrap();
        assert_eq!(b(1.0), 1.0);
        assert!((b(8.0) - 2.0 * (-2.0f64).exp()).abs() < 1e-15);
        let mut prev = 1.0;
        for k in 1..200 {
            let v = b(k as f64);
            assert!(v <= prev);
            prev = v;
        }
        assert!(b(1e4) < 1e-300);
        assert!(gt.exp_tail_bound(0.0).is_err());
    }

    #[test]
    fn pushforward_moments() {
        let gt = diag41([1.0, 0.0]);
        let k = SourceKernel::standard_gaussian(2).unwrap();
        let n = 100_000;
        let ys: Vec<Vec<f64>> = sample_source(&k, 8, n)
            .unwrap()
            .iter()
            .map(|x| gt.monge_map(x).unwrap())
            .collect();
        let nf = n as f64;
        let mean: Vec<f64> = (0..2).map(|j| ys.iter().map(|y| y[j]).sum::<f64>() / nf).collect();
        assert!((mean[0] - 1.0).abs() < 1e-2 * 2.0 && mean[1].abs() < 1e-2);
        for i in 0..2 {
            for j in 0..2 {
                let c = ys.iter().map(|y| (y[i] - mean[i]) * (y[j] - mean[j])).sum::<f64>() / nf;
                assert!((c - gt.target().cov()[(i, j)]).abs() < 5e-2, "cov[{i},{j}] = {c}");
            }
        }
    }

    #[test]
    fn w2_matches_monte_carlo() {
        assert!((scalar(4.0).w2_squared() - 1.0).abs() < 1e-15);
        let gt = diag41([1.0, 0.0]);
        assert!((gt.w2_squared() - 2.0).abs() < 1e-14);
        let k = SourceKernel::standard_gaussian(2).unwrap();
        let n = 1_000_000;
        let mc = sample_source(&k, 9, n)
            .unwrap()
            .iter()
            .map(|x| crate::linalg::dist_sq(x, &gt.monge_map(x).unwrap()))
            .sum::<f64>()
            / n as f64;
        assert!((mc - 2.0).abs() < 0.02, "{mc}");
    }

    #[test]
    fn exp_tail_bound_dominates_monte_carlo() {
        let mut rng = crate::rng::stream(10, 0);
        for d in [1usize, 2, 5] {
            let gt = GaussianTransport::new(random_spd(&mut rng, d)).unwrap();
            let k = SourceKernel::standard_gaussian(d).unwrap();
            let n = 100_000;
            let energies: Vec<f64> = sample_source(&k, 11 + d as u64, n)
                .unwrap()
                .iter()
                .map(|x| gt.ot_energy(&gt.monge_map(x).unwrap()).unwrap())
                .collect();
            for u in 1..=30 {
                let u = u as f64;
                let s = energies.iter().filter(|&&e| e >= u).count() as f64 / n as f64;
                assert!(s <= gt.exp_tail_bound(u).unwrap(), "d = {d}, u = {u}");
            }
        }
    }

    #[test]
    fn exp_tail_constants_examples() {
        let one = Dataset::new(vec![vec![1.0, 0.0]]).unwrap();
        let k = ExpTailConstants::new(&one, 0.0, 0.5).unwrap();
        assert_eq!(k.c_t, 1.0 / 32.0);
        assert!((k.c3 - 14.0 / 3.0).abs() < 1e-14);
        assert!((k.c_horizon - 3.0 / 224.0).abs() < 1e-16);
        assert!((k.u_horizon - 70.0 / 3.0).abs() < 1e-13);
        assert!((k.cap_c_t - (1.0f64 / 16.0).exp()).abs() < 1e-15);
        assert!((k.u_t - 10.0).abs() < 1e-14);
        assert!(k.energy_bound(1.0).is_none());
        assert!(k.energy_bound(100.0).unwrap() < 1.0);
        assert!(ExpTailConstants::new(&one, 0.0, 1.0).is_err());
        assert!(ExpTailConstants::new(&one, 0.6, 0.5).is_err());
    }

    #[test]
    fn mgf_examples() {
        assert_eq!(gaussian_mgf(0.0, 0.0).unwrap(), 1.0);
        assert!((gaussian_mgf(0.0, 0.25).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(gaussian_mgf(1.0, 0.5).is_err());
        let mut rng = crate::rng::stream(12, 0);
        let n = 1_000_000;
        let mc = (0..n)
            .map(|_| {
                let w: f64 = StandardNormal.sample(&mut rng);
                (w + 0.1 * w * w).exp()
            })
            .sum::<f64>()
            / n as f64;
        let exact = gaussian_mgf(1.0, 0.1).unwrap();
        assert!((mc - exact).abs() < 0.01 * exact, "{mc} vs {exact}");
    }

    #[test]
    fn chisq_bound_examples() {
        assert!((chisq_tail_bound(2.0, 16).unwrap() - (-2.0f64).exp()).abs() < 1e-16);
        assert!(chisq_tail_bound(1.9, 16).is_err());
        for s in [2.0, 3.0, 5.0] {
            for d in [1, 4, 16] {
                assert!(chisq_tail_bound(s + 1.0, d).unwrap() < chisq_tail_bound(s, d).unwrap());
                assert!(chisq_tail_bound(s, d + 1).unwrap() < chisq_tail_bound(s, d).unwrap());
            }
        }
        let k = SourceKernel::standard_gaussian(16).unwrap();
        let n = 200_000;
        let hits = sample_source(&k, 13, n)
            .unwrap()
            .iter()
            .filter(|x| crate::linalg::norm_sq(x) / 16.0 >= 2.0)
            .count();
        assert!((hits as f64 / n as f64) <= chisq_tail_bound(2.0, 16).unwrap());
    }

    #[test]
    fn growth_constants() {
        let data = Dataset::new(vec![vec![3.0, 4.0], vec![0.0, 1.0]]).unwrap();
        let rf = AffineGrowthConstants::new(&AffineSchedule::rectified_flow(), &data, 0.5).unwrap();
        assert!((rf.a_max - 2.0).abs() < 1e-15 && (rf.b_max - 10.0).abs() < 1e-14);
        assert!((rf.c1 - 1f64.exp()).abs() < 1e-15);
        assert!((rf.c2 - 5.0 * (1f64.exp() - 1.0)).abs() < 1e-13);
        let flat = AffineGrowthConstants::from_rates(0.0, 2.0, 0.5);
        assert_eq!((flat.c1, flat.c2, flat.c3, flat.c4), (1.0, 1.0, 0.0, 2.0));
        assert_eq!(flat.c_k, 8.0);
        assert_eq!(flat.c_e, 4.0);

        // grid search agrees with the closed form for the same schedule
        let custom = AffineSchedule::custom(crate::CustomSchedule::polynomial(1.0, 1.0, 0.05).unwrap());
        let reg = AffineSchedule::regularized(0.05).unwrap();
        let a = AffineGrowthConstants::new(&custom, &data, 0.9).unwrap();
        let b = AffineGrowthConstants::new(&reg, &data, 0.9).unwrap();
        assert!((a.a_max - b.a_max).abs() < 1e-12 && (a.b_max - b.b_max).abs() < 1e-12);
    }

    #[test]
    fn rf_energy_bound_value() {
        assert!((rf_energy_bound(&[1.0, 1.0], 1.0, 0.5).unwrap() - 14.0).abs() < 1e-13);
    }
}
