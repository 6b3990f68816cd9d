//! Pooled semiparametric estimation and optimal propensity design for batch
//! adaptive experiments.
//!
//! The crate is organised bottom-up:
//!
//! * [`dgp`] samples synthetic data-generating processes and exposes their
//!   closed-form conditional moments.
//! * [`propensity`] holds the shape-constrained propensity families, their
//!   finite-dimensional feasible sets and the exact Euclidean projections onto
//!   them.
//! * [`scores`] implements the AIPW and efficient partially-linear scores.
//! * [`nuisance`] fits out-of-fold mean, variance and mixture-propensity
//!   functions (or returns the truth in oracle mode).
//! * [`variance`] evaluates asymptotic covariances and information functions.
//! * [`optimizer`] solves the concave design problem by projected gradient
//!   ascent.
//! * [`csbae`] runs split batch adaptive experiments end to end and computes
//!   the pooled, aggregated and binned estimators.
//! * [`harness`] drives Monte Carlo studies and writes reports.

pub mod csbae;
pub mod dgp;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod nuisance;
pub mod optimizer;
mod par;
pub mod propensity;
pub mod rng;
pub mod scores;
pub mod variance;

pub use error::{Error, Result};
