//! Random-field Monte Carlo reliability analysis for spatially variable slopes,
//! with machine-learning surrogate classifiers trained on small data fractions.
//!
//! The pipeline has four stages:
//!
//! 1. [`randfield`] — anisotropic lognormal random fields of undrained shear
//!    strength, generated by covariance-matrix Cholesky decomposition.
//! 2. [`stability`] — a φ=0 circular-arc limit-equilibrium oracle that labels
//!    each realization stable or failed.
//! 3. [`campaign`] — seeded, reproducible Monte Carlo campaigns, persisted in
//!    the RFMC binary format, with train/test splitting and probability-of-failure
//!    accounting.
//! 4. [`models`] / [`eval`] — nine classifier kinds trained on realization
//!    feature vectors, scored with confusion-matrix metrics, ROC/AUC and
//!    repeated k-fold cross-validation.
//!
//! Field and metric mathematics are generic over the scalar type through
//! [`scalar::Scalar`]; the concrete pipeline runs on [`Real`].

pub mod campaign;
pub mod error;
pub mod eval;
pub mod models;
pub mod randfield;
pub mod rng;
pub mod scalar;
pub mod stability;

pub use error::{Error, Result};

/// Scalar type used by the concrete pipeline (campaigns, oracle, models).
pub type Real = f64;

/// Grid specification over the pipeline scalar.
pub type GridSpec = randfield::GridSpec<Real>;
/// Field statistics over the pipeline scalar.
pub type FieldStats = randfield::FieldStats<Real>;
/// Lognormal moments over the pipeline scalar.
pub type LognormalMoments = randfield::LognormalMoments<Real>;
/// Covariance factor over the pipeline scalar.
pub type CovarianceFactor = randfield::CovarianceFactor<Real>;
/// Sampled realization over the pipeline scalar.
pub type Realization = randfield::Realization<Real>;
/// Metric set over the pipeline scalar.
pub type MetricSet = eval::MetricSet<Real>;
