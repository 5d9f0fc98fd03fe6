//! Survival analysis with covariate-adjusted log-rank tests and
//! covariate-adjusted estimation of the unconditional hazard ratio, plus
//! prognostic-score adjustment trained on external control data.
//!
//! The pieces, bottom up:
//!
//! - [`survival`]: counting-process primitives, Nelson-Aalen curves,
//!   risk-set curves, the treatment-only Cox score and MPLE, martingale
//!   residuals.
//! - [`adjust`]: pseudo-outcomes, the covariate-adjusted log-rank test,
//!   and the covariate-adjusted log-HR estimator with variance and CI.
//! - [`stratified`]: the same machinery under stratified randomization.
//! - [`prognostic`]: training targets built from external control data,
//!   a built-in regression random forest, scoring, and correlation
//!   estimation.
//! - [`design`]: trial-planning arithmetic for variance ratios and
//!   required event counts.
//! - [`sim`]: data generators for seven external-data scenarios and a
//!   seeded, reproducible Monte Carlo engine.
//!
//! Everything is deterministic given seeds; Monte Carlo replicates and
//! forest trees derive independent RNG streams so results do not depend
//! on worker count (the `parallel` feature, on by default, enables a
//! rayon-backed runner).

#![forbid(unsafe_code)]

pub mod adjust;
pub mod data;
pub mod design;
pub mod error;
pub mod forest;
mod linalg;
pub mod prognostic;
pub mod rng;
pub mod sim;
pub mod solver;
pub mod stratified;
pub mod survival;

pub use data::{Arm, CovariateMatrix, Subject, TrialDataset};
pub use error::{Error, Result};

/// Crate version string, recorded in run manifests and model containers.
pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
