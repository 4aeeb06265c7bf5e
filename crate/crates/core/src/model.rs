//! State-space model abstraction shared by both filters.

use crate::error::Result;
use crate::matstat::Matrix;

/// Discrete-time model `x⁺ = f(x)`, `y = h(x)` with additive noise handled by
/// the filters.
pub trait StateModel: Sync {
    fn state_dim(&self) -> usize;
    fn meas_dim(&self) -> usize;
    /// Advances a state over `dt` seconds.
    fn propagate(&self, x: &[f64], dt: f64) -> Result<Vec<f64>>;
    fn observe(&self, x: &[f64]) -> Vec<f64>;
}

/// `x⁺ = A x`, `y = H x`. Used as the closed-form reference in tests and
/// for sanity runs of the filters; `dt` is ignored.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub transition: Matrix,
    pub observation: Matrix,
}

impl StateModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.transition.rows()
    }

    fn meas_dim(&self) -> usize {
        self.observation.rows()
    }

    fn propagate(&self, x: &[f64], _dt: f64) -> Result<Vec<f64>> {
        Ok(self.transition.mul_vec(x))
    }

    fn observe(&self, x: &[f64]) -> Vec<f64> {
        self.observation.mul_vec(x)
    }
}
