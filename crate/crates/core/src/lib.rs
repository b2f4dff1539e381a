//! Training-free empirical flow matching.
//!
//! Given a finite dataset, the minimizer of the empirical (conditional) flow
//! matching objective has a closed form: a softmax-weighted average of the
//! per-sample conditional velocities. This crate evaluates that velocity field,
//! integrates the sampler ODE while recording kinetic energy, and provides the
//! tools needed to study the resulting fields:
//!
//! * [`velocity`]: closed-form empirical and population Gaussian velocity fields.
//! * [`transport`]: fixed-step ODE integration with kinetic-energy bookkeeping.
//! * [`ot`]: Gaussian optimal-transport baselines and concentration constants.
//! * [`diagnostics`]: Jacobian asymmetry, the skew-sum condition for gradient
//!   fields, and the continuity-equation residual.
//! * [`tails`]: survival functions and exponential/polynomial tail fits.
//!
//! The building blocks ([`Dataset`], [`SourceKernel`], [`AffineSchedule`],
//! [`GaussianParams`]) live in their own modules and are re-exported here.

pub mod dataset;
pub mod diagnostics;
mod error;
pub mod gaussian;
pub mod kernel;
pub(crate) mod linalg;
pub mod ot;
pub mod rng;
pub mod schedule;
pub mod tails;
pub mod transport;
pub mod velocity;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use gaussian::GaussianParams;
pub use kernel::{sample_source, KernelKind, SourceKernel};
pub use schedule::{AffineSchedule, CustomSchedule};
pub use transport::{integrate, IntegratorConfig, Method, Trajectory};
pub use velocity::{EmpiricalField, PopulationGaussianField, VelocityField};

/// Default upper end of the time domain. The rectified-flow velocity is singular
/// at `t = 1`, so every field stops short of it.
pub const DEFAULT_T_MAX: f64 = 1.0 - 1e-3;

/// Version of this library, embedded in experiment outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
