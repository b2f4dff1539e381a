use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("time {t} outside the admissible range [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },

    #[error("non-positive sigma {sigma} at t = {t}")]
    NonPositiveSigma { t: f64, sigma: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("integration diverged at step {step}{}", sample.map(|s| format!(" (sample {s})")).unwrap_or_default())]
    IntegrationDiverged { step: usize, sample: Option<usize> },

    #[error("insufficient data: need at least {needed}, got {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("tail fit failed: {0}")]
    TailFit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Tags a divergence error with the sample it came from.
    pub fn with_sample(self, index: usize) -> Self {
        match self {
            Error::IntegrationDiverged { step, .. } => Error::IntegrationDiverged {
                step,
                sample: Some(index),
            },
            other => other,
        }
    }
}
