//! Numerical checks on velocity fields: Jacobian asymmetry, the skew-sum
//! condition for the empirical field to be a gradient field, the continuity
//! equation residual, and distances from generated samples to the data.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::statistics::{Data, Max, Min, OrderStatistics};

use crate::linalg::{check_dim, dist_sq, norm};
use crate::velocity::VelocityField;
use crate::{Dataset, EmpiricalField, Error, Result};

/// Central-difference step used when none is given: `1e-5 (1 + ||z||)`.
pub fn default_fd_step(z: &[f64]) -> f64 {
    1e-5 * (1.0 + norm(z))
}

fn check_step(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    Ok(())
}

/// Jacobian of `f` at `z` by central differences; entry `(j, k)` is `d f_j / d z_k`.
pub fn central_jacobian<F>(mut f: F, z: &[f64], h: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    check_step(h)?;
    let d = z.len();
    let mut jac = DMatrix::zeros(0, d);
    let mut probe = z.to_vec();
    for k in 0..d {
        probe[k] = z[k] + h;
        let up = f(&probe)?;
        probe[k] = z[k] - h;
        let dn = f(&probe)?;
        probe[k] = z[k];
        if k == 0 {
            jac = DMatrix::zeros(up.len(), d);
        }
        for j in 0..up.len() {
            jac[(j, k)] = (up[j] - dn[j]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Finite-difference Jacobian of `v(t, .)` at `z`.
pub fn jacobian_fd<F: VelocityField + ?Sized>(
    field: &F,
    t: f64,
    z: &[f64],
    h: f64,
) -> Result<DMatrix<f64>> {
    check_dim(field.dim(), z)?;
    central_jacobian(|p| field.velocity(t, p), z, h)
}

/// Frobenius norm of the antisymmetric part `(J - J^T) / 2`.
pub fn asym_norm(jac: &DMatrix<f64>) -> f64 {
    ((jac - jac.transpose()) * 0.5).norm()
}

/// `sum_i (v_i grad w_i^T - grad w_i v_i^T)` with the weight gradients taken
/// by central differences. It equals `J - J^T` for the empirical field.
pub fn skew_condition_sum(field: &EmpiricalField, t: f64, z: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let grads = central_jacobian(|p| field.weights(t, p), z, h)?;
    skew_sum(field, t, z, |i, k| grads[(i, k)])
}

/// Same sum with `grad w_i = w_i (s_i - sum_j w_j s_j)`, where `s_i` is the
/// conditional score.
pub fn skew_condition_sum_analytic(field: &EmpiricalField, t: f64, z: &[f64]) -> Result<DMatrix<f64>> {
    let n = field.dataset().len();
    let d = z.len();
    let w = field.weights(t, z)?;
    let mut scores = DMatrix::zeros(n, d);
    let mut mean = vec![0.0; d];
    for i in 0..n {
        let s = field.conditional_score(i, t, z)?;
        for k in 0..d {
            scores[(i, k)] = s[k];
            mean[k] += w[i] * s[k];
        }
    }
    skew_sum(field, t, z, |i, k| w[i] * (scores[(i, k)] - mean[k]))
}

fn skew_sum(
    field: &EmpiricalField,
    t: f64,
    z: &[f64],
    grad: impl Fn(usize, usize) -> f64,
) -> Result<DMatrix<f64>> {
    let d = z.len();
    let mut out = DMatrix::zeros(d, d);
    for i in 0..field.dataset().len() {
        let v = field.conditional_velocity(i, t, z)?;
        for j in 0..d {
            for k in 0..d {
                out[(j, k)] += v[j] * grad(i, k) - grad(i, j) * v[k];
            }
        }
    }
    Ok(out)
}

/// Jacobian asymmetry at one probe point.
#[derive(Debug, Clone, Serialize)]
pub struct AsymmetryReport {
    pub t: f64,
    pub z: Vec<f64>,
    #[serde(skip)]
    pub jacobian: DMatrix<f64>,
    pub asym_norm: f64,
    /// Frobenius norm of the skew sum; only defined for empirical fields.
    pub skew_sum_norm: Option<f64>,
    pub fd_step: f64,
}

impl AsymmetryReport {
    pub fn for_field<F: VelocityField + ?Sized>(field: &F, t: f64, z: &[f64], h: f64) -> Result<Self> {
        let jacobian = jacobian_fd(field, t, z, h)?;
        Ok(Self {
            t,
            z: z.to_vec(),
            asym_norm: asym_norm(&jacobian),
            jacobian,
            skew_sum_norm: None,
            fd_step: h,
        })
    }

    pub fn for_empirical(field: &EmpiricalField, t: f64, z: &[f64], h: f64) -> Result<Self> {
        let mut report = Self::for_field(field, t, z, h)?;
        report.skew_sum_norm = Some(skew_condition_sum(field, t, z, h)?.norm());
        Ok(report)
    }
}

/// Continuity-equation residual `d_t p + div(p v)` at `(t, z)`, by central
/// differences, together with the same quantity divided by `p_hat_t(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuityResidual {
    pub raw: f64,
    pub normalized: f64,
}

pub fn continuity_residual(
    field: &EmpiricalField,
    t: f64,
    z: &[f64],
    h_t: f64,
    h_z: f64,
) -> Result<ContinuityResidual> {
    check_step(h_t)?;
    check_step(h_z)?;
    let t_max = field.t_max();
    if !(t - h_t > 0.0 && t + h_t < t_max) {
        return Err(Error::Domain(format!(
            "time stencil [{}, {}] leaves (0, {t_max})",
            t - h_t,
            t + h_t
        )));
    }
    let log_p0 = field.log_density(t, z)?;
    // every density is taken relative to p_hat_t(z) to stay in range
    let rel = |s: f64, p: &[f64]| -> Result<f64> { Ok((field.log_density(s, p)? - log_p0).exp()) };
    let mut normalized = (rel(t + h_t, z)? - rel(t - h_t, z)?) / (2.0 * h_t);
    let mut probe = z.to_vec();
    for k in 0..z.len() {
        let mut flux = [0.0; 2];
        for (slot, sign) in [(0, 1.0), (1, -1.0)] {
            probe[k] = z[k] + sign * h_z;
            flux[slot] = rel(t, &probe)? * field.velocity(t, &probe)?[k];
        }
        probe[k] = z[k];
        normalized += (flux[0] - flux[1]) / (2.0 * h_z);
    }
    Ok(ContinuityResidual {
        raw: normalized * log_p0.exp(),
        normalized,
    })
}

/// Summary of nearest-data-point distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceStats {
    pub count: usize,
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub mean: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
}

/// Euclidean distance from each endpoint to its nearest data point.
pub fn nearest_distances(dataset: &Dataset, endpoints: &[Vec<f64>]) -> Result<Vec<f64>> {
    endpoints
        .iter()
        .map(|y| {
            check_dim(dataset.dim(), y)?;
            Ok(dataset
                .points()
                .map(|x| dist_sq(x, y))
                .fold(f64::INFINITY, f64::min)
                .sqrt())
        })
        .collect()
}

/// How close generated samples sit to the training points.
pub fn memorization_proxy(dataset: &Dataset, endpoints: &[Vec<f64>]) -> Result<DistanceStats> {
    if endpoints.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    let dist = nearest_distances(dataset, endpoints)?;
    let count = dist.len();
    let mean = dist.iter().sum::<f64>() / count as f64;
    let mut data = Data::new(dist);
    Ok(DistanceStats {
        count,
        min: data.min(),
        q05: data.quantile(0.05),
        q25: data.quantile(0.25),
        median: data.median(),
        mean,
        q75: data.quantile(0.75),
        q95: data.quantile(0.95),
        max: data.max(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{AffineSchedule, GaussianParams, PopulationGaussianField, SourceKernel};
    use rand::Rng;

    fn three_point() -> EmpiricalField {
        let data = Dataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        EmpiricalField::rectified_flow(data).unwrap()
    }

    #[test]
    fn quadratic_field_jacobian() {
        let f = |z: &[f64]| Ok(vec![z[1] * z[1], z[0]]);
        let j = central_jacobian(f, &[1.0, 1.0], 1e-5).unwrap();
        let exact = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 1.0, 0.0]);
        assert!((&j - &exact).abs().max() < 1e-9);
        assert!((asym_norm(&j) - 0.5f64.sqrt()).abs() < 1e-9);
        assert!(((&j - j.transpose()).norm() - 2f64.sqrt()).abs() < 1e-9);
        assert_eq!(asym_norm(&DMatrix::identity(3, 3)), 0.0);
    }

    #[test]
    fn single_point_jacobian_is_scaled_identity() {
        let f = EmpiricalField::rectified_flow(Dataset::new(vec![vec![2.0, -1.0]]).unwrap()).unwrap();
        let h = 1e-3;
        for t in [0.0, 0.5, 0.9] {
            let j = jacobian_fd(&f, t, &[0.3, 0.4], h).unwrap();
            let exact = DMatrix::<f64>::identity(2, 2) * (-1.0 / (1.0 - t));
            assert!((j - exact).abs().max() < 10.0 * h * h);
        }
    }

    #[test]
    fn population_jacobian_matches_analytic_and_is_symmetric() {
        let g = GaussianParams::new(vec![1.0, -1.0], vec![vec![2.0, 0.6], vec![0.6, 0.5]]).unwrap();
        let f = PopulationGaussianField::new(g);
        let h = 1e-4;
        for t in [0.1, 0.5, 0.95] {
            let j = jacobian_fd(&f, t, &[0.2, 1.5], h).unwrap();
            assert!((&j - f.jacobian(t)).abs().max() < 10.0 * h * h);
            assert!(asym_norm(&j) < 10.0 * h * h);
        }
    }

    #[test]
    fn skew_sum_vanishes_in_trivial_cases() {
        let one = EmpiricalField::rectified_flow(Dataset::new(vec![vec![1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(skew_condition_sum(&one, 0.4, &[0.1, 0.1], 1e-5).unwrap().norm(), 0.0);
        let line = EmpiricalField::rectified_flow(Dataset::new(vec![vec![1.0], vec![-3.0], vec![0.5]]).unwrap()).unwrap();
        assert_eq!(skew_condition_sum(&line, 0.4, &[0.2], 1e-5).unwrap().norm(), 0.0);
    }

    /// With a Gaussian kernel the weights are a softmax of Gaussian logits and
    /// `v = ((1 - t) grad log p_hat + z) / t`, so the field is curl-free.
    #[test]
    fn gaussian_kernel_rf_field_is_curl_free() {
        let f = three_point();
        let (t, z) = (0.5, [0.2, -0.1]);
        let report = AsymmetryReport::for_empirical(&f, t, &z, 1e-5).unwrap();
        assert!(report.asym_norm < 1e-9, "{}", report.asym_norm);
        assert!(skew_condition_sum_analytic(&f, t, &z).unwrap().norm() < 1e-12);
        let h = 1e-6;
        let mut grad = [0.0; 2];
        for k in 0..2 {
            let (mut up, mut dn) = (z, z);
            up[k] += h;
            dn[k] -= h;
            grad[k] = (f.log_density(t, &up).unwrap() - f.log_density(t, &dn).unwrap()) / (2.0 * h);
        }
        let v = f.velocity(t, &z).unwrap();
        for k in 0..2 {
            assert!((v[k] - ((1.0 - t) * grad[k] + z[k]) / t).abs() < 1e-8);
        }
    }

    #[test]
    fn student_t_kernel_field_is_not_a_gradient() {
        let data = Dataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        let k = SourceKernel::student_t(2, 3.0).unwrap();
        let f = EmpiricalField::new(data, AffineSchedule::rectified_flow(), k).unwrap();
        let (t, z) = (0.5, [0.2, -0.1]);
        let h = 1e-5;
        let report = AsymmetryReport::for_empirical(&f, t, &z, h).unwrap();
        assert!(report.asym_norm > 1e-3, "{}", report.asym_norm);
        let skew = report.skew_sum_norm.unwrap();
        assert!((skew - 2.0 * report.asym_norm).abs() < 0.05 * skew);
        let analytic = skew_condition_sum_analytic(&f, t, &z).unwrap();
        let numeric = skew_condition_sum(&f, t, &z, h).unwrap();
        assert!((analytic - numeric).abs().max() < 1e-6);
    }

    #[test]
    fn analytic_and_numeric_skew_sums_agree() {
        let data = Dataset::new(vec![vec![1.0, 0.3, 0.0], vec![-0.4, 2.0, 1.0], vec![0.0, -1.0, 0.5], vec![2.0, 2.0, -2.0]]).unwrap();
        let k = SourceKernel::student_t(3, 4.0).unwrap();
        let f = EmpiricalField::new(data, AffineSchedule::regularized(0.1).unwrap(), k).unwrap();
        let mut rng = crate::rng::stream(2, 0);
        for _ in 0..50 {
            let t = rng.random_range(0.05..0.95);
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = skew_condition_sum_analytic(&f, t, &z).unwrap();
            let n = skew_condition_sum(&f, t, &z, default_fd_step(&z)).unwrap();
            assert!((a - n).abs().max() < 1e-6);
        }
    }

    #[test]
    fn report_serializes_without_jacobian() {
        let r = AsymmetryReport::for_empirical(&three_point(), 0.5, &[0.2, -0.1], 1e-5).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["asym_norm", "fd_step", "skew_sum_norm", "t", "z"]);
    }

    #[test]
    fn continuity_single_point_converges() {
        let f = EmpiricalField::rectified_flow(Dataset::new(vec![vec![1.0, -0.5]]).unwrap()).unwrap();
        let z = [0.6, -0.1];
        let coarse = continuity_residual(&f, 0.5, &z, 1e-2, 1e-2).unwrap().normalized;
        let fine = continuity_residual(&f, 0.5, &z, 5e-3, 5e-3).unwrap().normalized;
        let ratio = coarse / fine;
        assert!((3.2..4.8).contains(&ratio), "{ratio}");
        assert!(continuity_residual(&f, 0.5, &z, 1e-4, 1e-4).unwrap().normalized.abs() < 1e-6);
    }

    #[test]
    fn continuity_stencil_must_fit() {
        let f = three_point();
        assert!(continuity_residual(&f, 1e-5, &[0.0, 0.0], 1e-4, 1e-4).is_err());
        assert!(continuity_residual(&f, 0.99895, &[0.0, 0.0], 1e-4, 1e-4).is_err());
    }

    #[test]
    fn memorization_examples() {
        let data = Dataset::new(vec![vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let exact = memorization_proxy(&data, &[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!((exact.min, exact.max, exact.mean), (0.0, 0.0, 0.0));
        let mid = memorization_proxy(&data, &[vec![1.0, 0.0]]).unwrap();
        assert_eq!(mid.median, 1.0);
        assert!(memorization_proxy(&data, &[]).is_err());
    }
}
