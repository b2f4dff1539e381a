//! Empirical survival functions and log-linear tail fits.
//!
//! An exponential tail `S(u) ~ C e^{-c u}` is a straight line in `(u, log S)`;
//! a polynomial tail `S(u) ~ C u^{-gamma}` is straight in `(log u, log S)`.
//! Both fits use the upper tail of the sample only.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::transport::format_float;
use crate::{Error, Result};

/// Smallest sample accepted by [`survival_function`].
pub const MIN_SAMPLES: usize = 100;

/// `P(X >= u)` evaluated at each distinct sample value.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalFunction {
    n: usize,
    points: Vec<(f64, f64)>,
}

pub fn survival_function(samples: &[f64]) -> Result<SurvivalFunction> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_SAMPLES,
            found: samples.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite sample {bad}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut points = Vec::new();
    let mut i = 0;
    while i < n {
        let u = sorted[i];
        points.push((u, (n - i) as f64 / n as f64));
        while i < n && sorted[i] == u {
            i += 1;
        }
    }
    Ok(SurvivalFunction { n, points })
}

impl SurvivalFunction {
    pub fn sample_size(&self) -> usize {
        self.n
    }

    /// `(u, S(u))` pairs in increasing `u`.
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// `S(u)` for any `u`, as a right-continuous step function.
    pub fn at(&self, u: f64) -> f64 {
        let idx = self.points.partition_point(|&(x, _)| x < u);
        self.points.get(idx).map_or(0.0, |&(_, s)| s)
    }

    pub fn write_csv(&self, mut w: impl Write, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "u,survival")?;
        for &(u, s) in &self.points {
            writeln!(w, "{},{}", format_float(u), format_float(s))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailModel {
    Exponential,
    Polynomial,
}

/// A least-squares line through the transformed tail of a survival function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFitResult {
    pub model: TailModel,
    /// `d log S / du` for the exponential model, `d log S / d log u` for the
    /// polynomial one.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_tail: usize,
    pub threshold_quantile: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFitOptions {
    /// Fit thresholds with `S(u) <= 1 - quantile`.
    pub quantile: f64,
    /// Widen the region toward the bulk until it holds this many thresholds.
    pub target_points: usize,
    /// Fail below this many thresholds.
    pub min_points: usize,
    /// Drop thresholds whose exceedance count is below this.
    pub min_exceedances: usize,
}

impl Default for TailFitOptions {
    fn default() -> Self {
        Self {
            quantile: 0.95,
            target_points: 200,
            min_points: 50,
            min_exceedances: 10,
        }
    }
}

impl TailFitOptions {
    pub fn with_quantile(quantile: f64) -> Self {
        Self {
            quantile,
            ..Self::default()
        }
    }
}

/// The thresholds a fit uses under `opts`.
pub fn tail_region<'a>(sf: &'a SurvivalFunction, opts: &TailFitOptions) -> Result<&'a [(f64, f64)]> {
    if !(0.0..1.0).contains(&opts.quantile) {
        return Err(Error::InvalidParameter(format!(
            "quantile must lie in [0, 1), got {}",
            opts.quantile
        )));
    }
    let pts = &sf.points;
    if pts.len() <= 2 {
        return Err(Error::TailFit(format!(
            "degenerate sample with {} distinct values",
            pts.len()
        )));
    }
    let floor = opts.min_exceedances as f64 / sf.n as f64;
    let end = pts.partition_point(|&(_, s)| s >= floor);
    let mut start = pts.partition_point(|&(_, s)| s > 1.0 - opts.quantile);
    if end < start + opts.target_points {
        start = end.saturating_sub(opts.target_points);
    }
    let region = &pts[start.min(end)..end];
    if region.len() < opts.min_points {
        return Err(Error::InsufficientData {
            needed: opts.min_points,
            found: region.len(),
        });
    }
    Ok(region)
}

fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if !(sxx > 0.0) {
        return Err(Error::TailFit("no spread in the fitted abscissae".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    Ok((slope, my - slope * mx, r2))
}

fn fit(sf: &SurvivalFunction, model: TailModel, opts: &TailFitOptions) -> Result<TailFitResult> {
    let region = tail_region(sf, opts)?;
    let xs: Vec<f64> = match model {
        TailModel::Exponential => region.iter().map(|p| p.0).collect(),
        TailModel::Polynomial => {
            if region[0].0 <= 0.0 {
                return Err(Error::TailFit("polynomial fit needs positive thresholds".into()));
            }
            region.iter().map(|p| p.0.ln()).collect()
        }
    };
    let ys: Vec<f64> = region.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r_squared) = least_squares(&xs, &ys)?;
    if !(slope < 0.0) {
        return Err(Error::TailFit(format!("non-decreasing tail, slope {slope}")));
    }
    Ok(TailFitResult {
        model,
        slope,
        intercept,
        r_squared,
        n_tail: region.len(),
        threshold_quantile: opts.quantile,
    })
}

/// Fits `log S(u) = intercept + slope * u`.
pub fn fit_exponential_tail(sf: &SurvivalFunction, opts: &TailFitOptions) -> Result<TailFitResult> {
    fit(sf, TailModel::Exponential, opts)
}

/// Fits `log S(u) = intercept + slope * log u`.
pub fn fit_polynomial_tail(sf: &SurvivalFunction, opts: &TailFitOptions) -> Result<TailFitResult> {
    fit(sf, TailModel::Polynomial, opts)
}

/// Both fits on the same region; the better `r^2` wins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelComparison {
    pub exponential: TailFitResult,
    pub polynomial: TailFitResult,
    pub preferred: TailModel,
}

pub fn compare_tail_models(sf: &SurvivalFunction, opts: &TailFitOptions) -> Result<ModelComparison> {
    let exponential = fit_exponential_tail(sf, opts)?;
    let polynomial = fit_polynomial_tail(sf, opts)?;
    let preferred = if exponential.r_squared >= polynomial.r_squared {
        TailModel::Exponential
    } else {
        TailModel::Polynomial
    };
    Ok(ModelComparison {
        exponential,
        polynomial,
        preferred,
    })
}

/// One-sided Dvoretzky-Kiefer-Wolfowitz radius `sqrt(ln(1/delta) / (2n))`.
pub fn dkw_radius(n: usize, delta: f64) -> f64 {
    ((1.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// Confidence level used by [`bound_domination_check`].
pub const DOMINATION_DELTA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationReport {
    pub holds: bool,
    pub u_min: f64,
    pub sample_size: usize,
    pub delta: f64,
    pub dkw_radius: f64,
    pub thresholds_checked: usize,
    /// Largest `S(u) - bound(u)` over the checked thresholds.
    pub max_excess: Option<f64>,
    pub first_violation: Option<f64>,
}

/// Checks `S(u) <= bound(u) + dkw` at every sampled threshold `u >= u_min`.
pub fn domination_report(
    sf: &SurvivalFunction,
    bound: impl Fn(f64) -> f64,
    u_min: f64,
    delta: f64,
) -> DominationReport {
    let radius = dkw_radius(sf.n, delta);
    let mut checked = 0;
    let mut max_excess: Option<f64> = None;
    let mut first_violation = None;
    for &(u, s) in sf.points.iter().filter(|p| p.0 >= u_min) {
        checked += 1;
        let excess = s - bound(u);
        max_excess = Some(max_excess.map_or(excess, |m| m.max(excess)));
        if first_violation.is_none() && !(excess <= radius) {
            first_violation = Some(u);
        }
    }
    DominationReport {
        holds: first_violation.is_none(),
        u_min,
        sample_size: sf.n,
        delta,
        dkw_radius: radius,
        thresholds_checked: checked,
        max_excess,
        first_violation,
    }
}

pub fn bound_domination_check(sf: &SurvivalFunction, bound: impl Fn(f64) -> f64, u_min: f64) -> bool {
    domination_report(sf, bound, u_min, DOMINATION_DELTA).holds
}
