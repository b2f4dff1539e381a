//! Small dense-vector helpers.

#[inline]
pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    norm_sq(v).sqrt()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn check_dim(expected: usize, v: &[f64]) -> crate::Result<()> {
    if v.len() != expected {
        return Err(crate::Error::DimensionMismatch {
            expected,
            found: v.len(),
        });
    }
    Ok(())
}
