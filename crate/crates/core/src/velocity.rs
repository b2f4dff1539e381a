//! Closed-form velocity fields.
//!
//! [`EmpiricalField`] is the minimizer of the empirical flow-matching objective
//! for an affine conditional flow: at `(t, z)` it averages the conditional
//! velocities `a_t(x_i) z + b_t(x_i)` with posterior weights
//! `w_i ∝ p_t(z | x_i)`. [`PopulationGaussianField`] is the population
//! rectified-flow velocity for a Gaussian target, which is linear in `z`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{check_dim, dist_sq};
use crate::{AffineSchedule, Dataset, Error, GaussianParams, Result, SourceKernel, DEFAULT_T_MAX};

/// Normalized weights below this value are flushed to zero.
pub const WEIGHT_FLUSH: f64 = 1e-300;

/// A time-dependent vector field on `[0, t_max] x R^d`.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;

    fn t_max(&self) -> f64;

    fn velocity_into(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()>;

    fn velocity(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.velocity_into(t, z, &mut out)?;
        Ok(out)
    }
}

fn check_time(t: f64, t_max: f64) -> Result<()> {
    if !(0.0..=t_max).contains(&t) {
        return Err(Error::TimeOutOfRange { t, t_max });
    }
    Ok(())
}

fn check_t_max(t_max: f64) -> Result<()> {
    if !(t_max > 0.0 && t_max < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "t_max must lie in (0, 1), got {t_max}"
        )));
    }
    Ok(())
}

/// `log(sum exp(v))` with maximum subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax with tiny weights flushed to zero.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
        if *x < WEIGHT_FLUSH {
            *x = 0.0;
        }
    }
    w
}

/// The closed-form empirical flow-matching velocity for a fixed dataset.
#[derive(Debug, Clone)]
pub struct EmpiricalField {
    dataset: Dataset,
    schedule: AffineSchedule,
    kernel: SourceKernel,
    t_max: f64,
}

impl EmpiricalField {
    pub fn new(dataset: Dataset, schedule: AffineSchedule, kernel: SourceKernel) -> Result<Self> {
        if kernel.dim() != dataset.dim() {
            return Err(Error::DimensionMismatch {
                expected: dataset.dim(),
                found: kernel.dim(),
            });
        }
        Ok(Self {
            dataset,
            schedule,
            kernel,
            t_max: DEFAULT_T_MAX,
        })
    }

    /// Empirical rectified flow with a standard Gaussian source.
    pub fn rectified_flow(dataset: Dataset) -> Result<Self> {
        let kernel = SourceKernel::standard_gaussian(dataset.dim())?;
        Self::new(dataset, AffineSchedule::rectified_flow(), kernel)
    }

    pub fn with_t_max(mut self, t_max: f64) -> Result<Self> {
        check_t_max(t_max)?;
        self.t_max = t_max;
        Ok(self)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn schedule(&self) -> &AffineSchedule {
        &self.schedule
    }

    pub fn kernel(&self) -> &SourceKernel {
        &self.kernel
    }

    fn check_args(&self, t: f64, z: &[f64]) -> Result<()> {
        check_time(t, self.t_max)?;
        check_dim(self.dataset.dim(), z)
    }

    /// `log p_t(z | x_i)` for every data point.
    pub fn conditional_log_densities(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        self.check_args(t, z)?;
        self.dataset
            .points()
            .map(|x| self.schedule.conditional_log_density(&self.kernel, t, z, x))
            .collect()
    }

    /// Posterior weights `w_i(t, z)`; non-negative and summing to one.
    pub fn weights(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.conditional_log_densities(t, z)?))
    }

    /// `log p_hat_t(z)` where `p_hat_t` is the uniform mixture of conditionals.
    pub fn log_density(&self, t: f64, z: &[f64]) -> Result<f64> {
        let logs = self.conditional_log_densities(t, z)?;
        Ok(log_sum_exp(&logs) - (self.dataset.len() as f64).ln())
    }

    /// `v_i(t, z) = a_t(x_i) z + b_t(x_i)`.
    pub fn conditional_velocity(&self, i: usize, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        self.check_args(t, z)?;
        let (a, mut b) = self.schedule.affine_coefficients(t, self.dataset.point(i))?;
        for (bj, zj) in b.iter_mut().zip(z) {
            *bj += a * zj;
        }
        Ok(b)
    }

    /// `grad_z log p_t(z | x_i)`.
    pub fn conditional_score(&self, i: usize, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        self.check_args(t, z)?;
        let x = self.dataset.point(i);
        let m = self.schedule.m(t, x);
        let sigma = self.schedule.sigma(t, x);
        if !(sigma > 0.0) {
            return Err(Error::NonPositiveSigma { t, sigma });
        }
        let r2 = dist_sq(z, &m) / (sigma * sigma);
        let f = self.kernel.grad_factor(r2) / (sigma * sigma);
        Ok(z.iter().zip(&m).map(|(zj, mj)| f * (zj - mj)).collect())
    }

    /// Evaluates the field term by term: explicit weights times the
    /// conditional velocities. Works for every schedule; the trait method
    /// takes a faster route for the built-in ones.
    pub fn velocity_general(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let w = self.weights(t, z)?;
        let mut out = vec![0.0; z.len()];
        for (i, wi) in w.iter().enumerate() {
            if *wi == 0.0 {
                continue;
            }
            let vi = self.conditional_velocity(i, t, z)?;
            for (o, v) in out.iter_mut().zip(&vi) {
                *o += wi * v;
            }
        }
        Ok(out)
    }

    /// Single-pass evaluation for schedules with `m_t(x) = t x` and
    /// `sigma_t = 1 - c t`. Then `v = a z + (sum_i w_i x_i) / sigma` with
    /// `a = -c / sigma`, and the shared `-d log sigma` term drops out of the
    /// softmax. Uses a running maximum so no logits are stored.
    fn velocity_linear(&self, c: f64, t: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        let sigma = 1.0 - c * t;
        if !(sigma > 0.0) {
            return Err(Error::NonPositiveSigma { t, sigma });
        }
        let inv_s2 = 1.0 / (sigma * sigma);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut max = f64::NEG_INFINITY;
        let mut total = 0.0;
        for x in self.dataset.points() {
            let r2: f64 = z
                .iter()
                .zip(x)
                .map(|(zj, xj)| {
                    let e = zj - t * xj;
                    e * e
                })
                .sum::<f64>()
                * inv_s2;
            let l = self.kernel.log_shape(r2);
            if l > max {
                let rescale = (max - l).exp();
                total *= rescale;
                out.iter_mut().for_each(|o| *o *= rescale);
                max = l;
            }
            let w = (l - max).exp();
            total += w;
            for (o, xj) in out.iter_mut().zip(x) {
                *o += w * xj;
            }
        }
        let a = -c / sigma;
        let scale = 1.0 / (total * sigma);
        for (o, zj) in out.iter_mut().zip(z) {
            *o = a * zj + *o * scale;
        }
        Ok(())
    }
}

impl VelocityField for EmpiricalField {
    fn dim(&self) -> usize {
        self.dataset.dim()
    }

    fn t_max(&self) -> f64 {
        self.t_max
    }

    fn velocity_into(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_args(t, z)?;
        check_dim(self.dataset.dim(), out)?;
        match self.schedule.linear_rate() {
            Some(c) => self.velocity_linear(c, t, z, out),
            None => {
                out.copy_from_slice(&self.velocity_general(t, z)?);
                Ok(())
            }
        }
    }
}

/// The empirical rectified-flow velocity written directly as
/// `sum_i softmax_i(-||z - t x_j||^2 / (2 (1 - t)^2)) (x_i - z) / (1 - t)`.
pub fn rectified_flow_velocity(dataset: &Dataset, t: f64, z: &[f64]) -> Result<Vec<f64>> {
    check_dim(dataset.dim(), z)?;
    if !(0.0..1.0).contains(&t) {
        return Err(Error::TimeOutOfRange { t, t_max: 1.0 });
    }
    let denom = 2.0 * (1.0 - t) * (1.0 - t);
    let logits: Vec<f64> = dataset
        .points()
        .map(|x| {
            let tx: Vec<f64> = x.iter().map(|xj| t * xj).collect();
            -dist_sq(z, &tx) / denom
        })
        .collect();
    let w = softmax(&logits);
    let mut out = vec![0.0; z.len()];
    for (wi, x) in w.iter().zip(dataset.points()) {
        for ((o, xj), zj) in out.iter_mut().zip(x).zip(z) {
            *o += wi * (xj - zj) / (1.0 - t);
        }
    }
    Ok(out)
}

/// Population rectified-flow velocity from `N(0, I)` to `N(m1, Sigma1)` under
/// the independent coupling:
/// `v(t, z) = m1 + (t Sigma1 - (1 - t) I) Sigma_t^{-1} (z - t m1)` with
/// `Sigma_t = (1 - t)^2 I + t^2 Sigma1`.
#[derive(Debug, Clone)]
pub struct PopulationGaussianField {
    target: GaussianParams,
    t_max: f64,
}

impl PopulationGaussianField {
    pub fn new(target: GaussianParams) -> Self {
        Self {
            target,
            t_max: DEFAULT_T_MAX,
        }
    }

    pub fn with_t_max(mut self, t_max: f64) -> Result<Self> {
        check_t_max(t_max)?;
        self.t_max = t_max;
        Ok(self)
    }

    pub fn target(&self) -> &GaussianParams {
        &self.target
    }

    fn path_variance(t: f64, lambda: f64) -> f64 {
        (1.0 - t) * (1.0 - t) + t * t * lambda
    }

    /// `Sigma_t = (1 - t)^2 I + t^2 Sigma1`.
    pub fn path_covariance(&self, t: f64) -> DMatrix<f64> {
        self.target.spectral_map(|l| Self::path_variance(t, l))
    }

    /// The constant Jacobian `(t Sigma1 - (1 - t) I) Sigma_t^{-1}`.
    pub fn jacobian(&self, t: f64) -> DMatrix<f64> {
        self.target
            .spectral_map(|l| (t * l - (1.0 - t)) / Self::path_variance(t, l))
    }

    /// Applies `Q diag(g(lambda)) Q^T` to `z - t m1`.
    fn apply_spectral(&self, t: f64, z: &[f64], g: impl Fn(f64) -> f64) -> DVector<f64> {
        let q = self.target.eigenvectors();
        let centered = DVector::from_column_slice(z) - self.target.mean() * t;
        let mut proj = q.transpose() * centered;
        for (p, l) in proj.iter_mut().zip(self.target.eigenvalues().iter()) {
            *p *= g(*l);
        }
        q * proj
    }

    /// Score of `p_t` recovered from the velocity through
    /// `grad log p_t(z) = t / (1 - t) v(t, z) - z / (1 - t)`.
    pub fn score(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        if !(t > 0.0 && t <= self.t_max) {
            return Err(Error::Domain(format!(
                "score relation requires t in (0, {}], got {t}",
                self.t_max
            )));
        }
        let v = self.velocity(t, z)?;
        Ok(v
            .iter()
            .zip(z)
            .map(|(vj, zj)| t / (1.0 - t) * vj - zj / (1.0 - t))
            .collect())
    }

    /// `-Sigma_t^{-1} (z - t m1)`, the score of `N(t m1, Sigma_t)`.
    pub fn analytic_score(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        check_time(t, 1.0)?;
        check_dim(self.dim(), z)?;
        let s = self.apply_spectral(t, z, |l| -1.0 / Self::path_variance(t, l));
        Ok(s.iter().copied().collect())
    }
}

impl VelocityField for PopulationGaussianField {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn t_max(&self) -> f64 {
        self.t_max
    }

    fn velocity_into(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        check_time(t, self.t_max)?;
        check_dim(self.dim(), z)?;
        check_dim(self.dim(), out)?;
        let v = self.apply_spectral(t, z, |l| (t * l - (1.0 - t)) / Self::path_variance(t, l));
        for ((o, vj), mj) in out.iter_mut().zip(v.iter()).zip(self.target.mean().iter()) {
            *o = mj + vj;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ds(points: &[&[f64]]) -> Dataset {
        Dataset::new(points.iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    fn gauss_1d_pdf(z: f64, mean: f64, var: f64) -> f64 {
        (-(z - mean) * (z - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn single_point_weight_is_one() {
        let f = EmpiricalField::rectified_flow(ds(&[&[3.0, -1.0]])).unwrap();
        for (t, z) in [(0.0, [0.0, 0.0]), (0.7, [100.0, -5.0])] {
            assert_eq!(f.weights(t, &z).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn symmetric_pair_has_equal_weights_and_zero_velocity() {
        let f = EmpiricalField::rectified_flow(ds(&[&[1.0, 0.0], &[-1.0, 0.0]])).unwrap();
        for t in [0.0, 0.3, 0.9] {
            assert_eq!(f.weights(t, &[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
            let v = f.velocity(t, &[0.0, 0.0]).unwrap();
            assert!(v.iter().all(|c| c.abs() < 1e-15), "{v:?}");
        }
    }

    #[test]
    fn two_point_weights_and_velocity() {
        // logits -0.125 and -1.125 differ by exactly one
        let f = EmpiricalField::rectified_flow(ds(&[&[0.0], &[2.0]])).unwrap();
        let w = f.weights(0.5, &[0.25]).unwrap();
        let w1 = 1.0 / (1.0 + (-1f64).exp());
        assert!((w[0] - w1).abs() < 1e-15);
        assert!((w[0] - 0.731059).abs() < 1e-6);
        assert!((w[1] - 0.268941).abs() < 1e-6);
        let v = f.velocity(0.5, &[0.25]).unwrap()[0];
        let expected = w1 * (-0.5) + (1.0 - w1) * 3.5;
        assert!((v - expected).abs() < 1e-14);
        assert!((v - 0.575766).abs() < 1e-6);
    }

    #[test]
    fn single_point_velocity_is_conditional() {
        let f = EmpiricalField::rectified_flow(ds(&[&[1.5, -2.0]])).unwrap();
        assert_eq!(f.velocity(0.0, &[0.0, 0.0]).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn log_density_examples() {
        let one = EmpiricalField::rectified_flow(ds(&[&[0.7]])).unwrap();
        let direct = one
            .schedule()
            .conditional_log_density(one.kernel(), 0.4, &[0.1], &[0.7])
            .unwrap();
        assert!((one.log_density(0.4, &[0.1]).unwrap() - direct).abs() < 1e-15);

        let two = EmpiricalField::rectified_flow(ds(&[&[0.0], &[2.0]])).unwrap();
        for z in [-1.0, 0.3, 4.0] {
            let expected = gauss_1d_pdf(z, 0.0, 1.0).ln();
            assert!((two.log_density(0.0, &[z]).unwrap() - expected).abs() < 1e-13);
        }
        let expected = (0.5 * (gauss_1d_pdf(0.5, 0.0, 0.25) + gauss_1d_pdf(0.5, 1.0, 0.25))).ln();
        assert!((two.log_density(0.5, &[0.5]).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn time_range_is_enforced() {
        let f = EmpiricalField::rectified_flow(ds(&[&[1.0]])).unwrap();
        assert!(matches!(f.weights(-0.1, &[0.0]), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(f.velocity(0.9995, &[0.0]), Err(Error::TimeOutOfRange { .. })));
        assert!(f.velocity(DEFAULT_T_MAX, &[0.0]).is_ok());
        assert!(matches!(f.velocity(0.5, &[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(f.clone().with_t_max(1.0).is_err());
    }

    #[test]
    fn weights_stable_far_from_data() {
        let f = EmpiricalField::rectified_flow(ds(&[&[1.0, 2.0], &[-3.0, 0.5], &[0.0, 0.0]])).unwrap();
        let w = f.weights(0.99, &[1000.0, -1000.0]).unwrap();
        assert!(w.iter().all(|x| x.is_finite() && *x >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f.velocity(0.99, &[1000.0, -1000.0]).unwrap().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn fast_and_general_paths_agree_for_student_t() {
        let data = ds(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, -1.0], &[4.0, 2.0]]);
        let kernel = SourceKernel::student_t(2, 3.0).unwrap();
        let f = EmpiricalField::new(data, AffineSchedule::regularized(0.05).unwrap(), kernel).unwrap();
        let mut rng = crate::rng::stream(1, 0);
        for _ in 0..200 {
            let t = rng.random_range(0.0..0.999);
            let z = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
            let fast = f.velocity(t, &z).unwrap();
            let slow = f.velocity_general(t, &z).unwrap();
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn custom_schedule_uses_general_path() {
        let data = ds(&[&[1.0], &[-2.0]]);
        let k = SourceKernel::standard_gaussian(1).unwrap();
        let custom = AffineSchedule::custom(crate::CustomSchedule::polynomial(1.0, 1.0, 0.0).unwrap());
        let f1 = EmpiricalField::new(data.clone(), custom, k).unwrap();
        let f2 = EmpiricalField::rectified_flow(data).unwrap();
        let (a, b) = (f1.velocity(0.6, &[0.4]).unwrap(), f2.velocity(0.6, &[0.4]).unwrap());
        assert!((a[0] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn conditional_score_matches_finite_difference() {
        let data = ds(&[&[1.0, 0.5]]);
        let k = SourceKernel::student_t(2, 2.5).unwrap();
        let f = EmpiricalField::new(data, AffineSchedule::regularized(0.1).unwrap(), k).unwrap();
        let (t, z) = (0.4, [0.3, -0.8]);
        let g = f.conditional_score(0, t, &z).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let (mut up, mut dn) = (z, z);
            up[j] += h;
            dn[j] -= h;
            let fd = (f.log_density(t, &up).unwrap() - f.log_density(t, &dn).unwrap()) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn population_velocity_examples() {
        let g = GaussianParams::new(vec![1.0, -2.0], vec![vec![3.0, 0.5], vec![0.5, 2.0]]).unwrap();
        let f = PopulationGaussianField::new(g);
        let z = [0.3, 0.7];
        let v = f.velocity(0.0, &z).unwrap();
        assert!((v[0] - (1.0 - 0.3)).abs() < 1e-14 && (v[1] - (-2.0 - 0.7)).abs() < 1e-14);

        let f1 = PopulationGaussianField::new(GaussianParams::new(vec![0.0], vec![vec![4.0]]).unwrap());
        assert!((f1.velocity(0.5, &[1.0]).unwrap()[0] - 1.2).abs() < 1e-14);

        let id = PopulationGaussianField::new(GaussianParams::new(vec![0.0; 2], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        for t in [0.1, 0.5, 0.8] {
            let z = [0.4, -1.3];
            let c = (t - (1.0 - t)) / ((1.0 - t) * (1.0 - t) + t * t);
            let v = id.velocity(t, &z).unwrap();
            assert!((v[0] - c * z[0]).abs() < 1e-14 && (v[1] - c * z[1]).abs() < 1e-14);
        }
    }

    /// Regresses `x1 - x0` on `Z_t` from joint samples; the population velocity
    /// is the conditional mean, which is affine for Gaussians.
    #[test]
    fn population_velocity_matches_monte_carlo_regression() {
        use rand_distr::{Distribution, StandardNormal};
        let t = 0.5;
        let (m1, s1) = (0.0, 2.0); // Sigma1 = 4
        let n = 400_000;
        let mut rng = crate::rng::stream(42, 0);
        let (mut sz, mut sy, mut szz, mut szy) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x0: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let x1 = m1 + s1 * e;
            let z = (1.0 - t) * x0 + t * x1;
            let y = x1 - x0;
            sz += z;
            sy += y;
            szz += z * z;
            szy += z * y;
        }
        let nf = n as f64;
        let slope = (szy / nf - sz / nf * sy / nf) / (szz / nf - (sz / nf).powi(2));
        let intercept = sy / nf - slope * sz / nf;
        let mc_at_one = intercept + slope;
        let f = PopulationGaussianField::new(GaussianParams::new(vec![0.0], vec![vec![4.0]]).unwrap());
        let exact = f.velocity(t, &[1.0]).unwrap()[0];
        assert!((mc_at_one - exact).abs() < 0.02 * exact.abs(), "{mc_at_one} vs {exact}");

        // identity target: scalar coefficient -(t - (1 - t)) / ((1 - t)^2 + t^2) = 0 at t = 0.5
        let id = PopulationGaussianField::new(GaussianParams::new(vec![0.0], vec![vec![1.0]]).unwrap());
        assert!(id.velocity(0.5, &[0.7]).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn population_score_examples() {
        let id = PopulationGaussianField::new(GaussianParams::new(vec![0.0; 2], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let s = id.score(0.5, &[1.0, -2.0]).unwrap();
        assert!((s[0] + 2.0).abs() < 1e-14 && (s[1] - 4.0).abs() < 1e-14);
        let f = PopulationGaussianField::new(GaussianParams::new(vec![0.0], vec![vec![4.0]]).unwrap());
        assert!((f.score(0.5, &[1.0]).unwrap()[0] + 0.8).abs() < 1e-14);
        assert!(f.score(0.0, &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn score_relation_holds(t in 0.01..0.99f64, z0 in -5.0..5.0f64, z1 in -5.0..5.0f64) {
            let g = GaussianParams::new(vec![0.5, -1.0], vec![vec![2.0, 0.7], vec![0.7, 0.9]]).unwrap();
            let f = PopulationGaussianField::new(g);
            let a = f.score(t, &[z0, z1]).unwrap();
            let b = f.analytic_score(t, &[z0, z1]).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn rf_convex_hull_bound(t in 0.0..0.999f64, z0 in -100.0..100.0f64, z1 in -100.0..100.0f64, seed in 0u64..1000) {
            let k = SourceKernel::standard_gaussian(2).unwrap();
            let data = Dataset::new(crate::sample_source(&k, seed, 7).unwrap()).unwrap();
            let m = data.max_norm();
            let f = EmpiricalField::rectified_flow(data).unwrap();
            let z = [z0, z1];
            let v = f.velocity(t, &z).unwrap();
            let bound = (m + crate::linalg::norm(&z)) / (1.0 - t);
            prop_assert!(crate::linalg::norm(&v) <= bound * (1.0 + 1e-12));
        }

        #[test]
        fn weights_normalized(t in 0.0..0.999f64, r in 0.0..1000.0f64, angle in 0.0..6.3f64, seed in 0u64..100) {
            let k = SourceKernel::student_t(2, 3.0).unwrap();
            let data = Dataset::new(crate::sample_source(&k, seed, 9).unwrap()).unwrap();
            for kernel in [k, SourceKernel::standard_gaussian(2).unwrap()] {
                let f = EmpiricalField::new(data.clone(), AffineSchedule::rectified_flow(), kernel).unwrap();
                let w = f.weights(t, &[r * angle.cos(), r * angle.sin()]).unwrap();
                prop_assert!(w.iter().all(|x| *x >= 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
