//! Additive-noise unscented Kalman filter.
//!
//! Sigma points follow the scaled unscented transform: `2n+1` points at the
//! mean and at `mean ± √(n+λ)·F` columns, where `F Fᵀ = P`. Process and
//! measurement noise are added after propagation, so the sigma set is never
//! augmented.

use crate::error::{DseError, Result};
use crate::matstat::{repair_covariance, sqrt_factor, Matrix, SymMatrix};
use crate::model::StateModel;

/// Gaussian belief over the state: mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

impl BeliefState {
    pub fn new(mean: Vec<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(DseError::DimensionMismatch(format!(
                "mean has {} entries, covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(DseError::NonFiniteState(format!("{mean:?}")));
        }
        Ok(BeliefState { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UkfConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub process_cov: SymMatrix,
    pub meas_cov: SymMatrix,
}

impl Default for UkfConfig {
    fn default() -> Self {
        UkfConfig {
            alpha: 1.0,
            beta: 2.0,
            kappa: 0.0,
            process_cov: SymMatrix::from_diag(&[1e-8; 4]),
            meas_cov: SymMatrix::from_diag(&[1.9e-4; 2]),
        }
    }
}

impl UkfConfig {
    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(DseError::InvalidParameter(format!(
                "ukf alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(n as f64 + self.lambda(n) > 0.0) {
            return Err(DseError::InvalidParameter(format!(
                "ukf scaling gives n + lambda = {} <= 0",
                n as f64 + self.lambda(n)
            )));
        }
        for (name, m) in [("process_cov", &self.process_cov), ("meas_cov", &self.meas_cov)] {
            if m.min_eigenvalue() < -1e-12 * m.trace().abs().max(1.0) {
                return Err(DseError::InvalidParameter(format!("ukf {name} is not PSD")));
            }
        }
        Ok(())
    }
}

/// Sigma points with their mean and covariance weights.
#[derive(Debug, Clone)]
pub struct SigmaSet {
    pub points: Vec<Vec<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

impl SigmaSet {
    pub fn weighted_mean(&self, values: &[Vec<f64>]) -> Vec<f64> {
        let dim = values[0].len();
        let mut m = vec![0.0; dim];
        for (w, v) in self.mean_weights.iter().zip(values) {
            for (mi, vi) in m.iter_mut().zip(v) {
                *mi += w * vi;
            }
        }
        m
    }

    /// `Σ Wᶜᵢ (aᵢ − ā)(bᵢ − b̄)ᵀ`
    pub fn weighted_cross(&self, a: &[Vec<f64>], a_mean: &[f64], b: &[Vec<f64>], b_mean: &[f64]) -> Matrix {
        let mut out = Matrix::zeros(a_mean.len(), b_mean.len());
        for ((w, ai), bi) in self.cov_weights.iter().zip(a).zip(b) {
            let da: Vec<f64> = ai.iter().zip(a_mean).map(|(x, m)| x - m).collect();
            let db: Vec<f64> = bi.iter().zip(b_mean).map(|(x, m)| x - m).collect();
            out.add_outer(*w, &da, &db);
        }
        out
    }
}

pub fn sigma_points(b: &BeliefState, c: &UkfConfig) -> Result<SigmaSet> {
    let n = b.dim();
    let lambda = c.lambda(n);
    let spread = (n as f64 + lambda).sqrt();
    let factor = sqrt_factor(&b.cov)?;

    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(b.mean.clone());
    for sign in [1.0, -1.0] {
        for j in 0..n {
            points.push(
                b.mean
                    .iter()
                    .enumerate()
                    .map(|(i, m)| m + sign * spread * factor[(i, j)])
                    .collect(),
            );
        }
    }

    let w0m = lambda / (n as f64 + lambda);
    let wi = 1.0 / (2.0 * (n as f64 + lambda));
    let mut mean_weights = vec![wi; 2 * n + 1];
    let mut cov_weights = vec![wi; 2 * n + 1];
    mean_weights[0] = w0m;
    cov_weights[0] = w0m + (1.0 - c.alpha * c.alpha + c.beta);
    Ok(SigmaSet {
        points,
        mean_weights,
        cov_weights,
    })
}

/// Time update over `dt`.
pub fn ukf_predict<M: StateModel + ?Sized>(b: &BeliefState, model: &M, c: &UkfConfig, dt: f64) -> Result<BeliefState> {
    let sigma = sigma_points(b, c)?;
    let propagated = sigma
        .points
        .iter()
        .map(|x| model.propagate(x, dt))
        .collect::<Result<Vec<_>>>()?;
    let mean = sigma.weighted_mean(&propagated);
    let cov = sigma
        .weighted_cross(&propagated, &mean, &propagated, &mean)
        .add(c.process_cov.as_matrix());
    BeliefState::new(mean, repair_covariance(&cov))
}

/// Measurement update with observation `y`.
pub fn ukf_update<M: StateModel + ?Sized>(b: &BeliefState, y: &[f64], model: &M, c: &UkfConfig) -> Result<BeliefState> {
    if y.len() != model.meas_dim() {
        return Err(DseError::DimensionMismatch(format!(
            "measurement has {} entries, model expects {}",
            y.len(),
            model.meas_dim()
        )));
    }
    let sigma = sigma_points(b, c)?;
    let predicted: Vec<Vec<f64>> = sigma.points.iter().map(|x| model.observe(x)).collect();
    let y_hat = sigma.weighted_mean(&predicted);
    let pyy = sigma.weighted_cross(&predicted, &y_hat, &predicted, &y_hat);
    let pxy = sigma.weighted_cross(&sigma.points, &b.mean, &predicted, &y_hat);
    let s = crate::matstat::symmetrize(&pyy.add(c.meas_cov.as_matrix()));
    let gain = kalman_gain(&pxy, &s)?;

    let innovation: Vec<f64> = y.iter().zip(&y_hat).map(|(a, b)| a - b).collect();
    let correction = gain.mul_vec(&innovation);
    let mean: Vec<f64> = b.mean.iter().zip(&correction).map(|(m, d)| m + d).collect();
    let cov = b
        .cov
        .as_matrix()
        .sub(&gain.mul(s.as_matrix()).mul(&gain.transpose()));
    BeliefState::new(mean, repair_covariance(&cov))
}

/// `K = Pxy · S⁻¹`, with `S` required to be positive definite.
pub(crate) fn kalman_gain(pxy: &Matrix, s: &SymMatrix) -> Result<Matrix> {
    if !s.as_matrix().is_finite() {
        return Err(DseError::SingularInnovation);
    }
    let l = crate::matstat::cholesky(s).map_err(|_| DseError::SingularInnovation)?;
    // S symmetric: K = (S⁻¹ Pxyᵀ)ᵀ
    Ok(l.solve(&pxy.transpose()).transpose())
}
