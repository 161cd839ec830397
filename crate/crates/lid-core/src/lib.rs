//! Local intrinsic dimension (LID) estimation against ground-truth synthetic
//! manifolds.
//!
//! The crate provides:
//! - a catalog of embedded submanifolds of R^D with known dimension, exact
//!   samplers and pointwise densities ([`geometry`]);
//! - variance-exploding and variance-preserving diffusion noise schedules
//!   ([`schedule`]);
//! - oracles for Gaussian- and uniform-noised densities and their
//!   log-derivatives in the noise scale ([`convolve`]);
//! - analytic and stochastic score fields with exact Jacobian traces
//!   ([`score`]);
//! - the LID estimators themselves: the score-based FLIPD estimator, the
//!   uniform-ball slope, LIDL regression and an empirical ball-count
//!   regressor ([`estimators`]);
//! - experiment configs, sweeps, verification suites and a reverse-SDE
//!   sampling demo ([`harness`]).

pub mod convolve;
pub mod estimators;
pub mod geometry;
pub mod harness;
pub mod numeric;
pub mod rng;
pub mod schedule;
pub mod score;

pub use estimators::{LidEstimate, RegressionFit};
pub use geometry::{DensitySpec, ManifoldSpec, QueryPoint};
pub use schedule::ScheduleSpec;
pub use score::ScoreField;
