//! Dynamic state estimation of a fourth-order synchronous generator from
//! PMU power measurements corrupted by Gaussian-mixture noise, with an
//! unscented Kalman filter and a stochastic ensemble Kalman filter.

pub mod config;
pub mod csvio;
pub mod enkf;
pub mod error;
pub mod genmodel;
pub mod harness;
pub mod matstat;
pub mod mixnoise;
pub mod model;
pub mod plot;
pub mod scenario;
pub mod ukf;

pub use error::{DseError, Result};
