//! Stochastic (perturbed-observation) ensemble Kalman filter.
//!
//! Randomness is drawn per member from a substream of a per-step base seed,
//! so serial and parallel propagation give bit-identical ensembles.

use rayon::prelude::*;

use crate::error::{DseError, Result};
use crate::matstat::{sample_with_factor, sqrt_factor, symmetrize, Matrix, RngStream, SymMatrix};
use crate::model::StateModel;
use crate::ukf::{kalman_gain, BeliefState};

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<Vec<f64>>,
    pub rng: RngStream,
}

impl Ensemble {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.members.len() as f64;
        let dim = self.members[0].len();
        let mut m = vec![0.0; dim];
        for x in &self.members {
            for (mi, xi) in m.iter_mut().zip(x) {
                *mi += xi;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnkfConfig {
    pub ensemble_size: usize,
    pub process_cov: SymMatrix,
    pub meas_cov: SymMatrix,
    /// Multiplicative anomaly inflation applied after each forecast; 1 is off.
    pub inflation: f64,
    /// Propagate members on the rayon pool.
    pub parallel: bool,
}

impl Default for EnkfConfig {
    fn default() -> Self {
        EnkfConfig {
            ensemble_size: 100,
            process_cov: SymMatrix::from_diag(&[1e-8; 4]),
            meas_cov: SymMatrix::from_diag(&[1.9e-4; 2]),
            inflation: 1.0,
            parallel: false,
        }
    }
}

impl EnkfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(DseError::InvalidParameter(format!(
                "ensemble size must be at least 2, got {}",
                self.ensemble_size
            )));
        }
        if !(self.inflation >= 1.0 && self.inflation.is_finite()) {
            return Err(DseError::InvalidParameter(format!(
                "inflation must be >= 1, got {}",
                self.inflation
            )));
        }
        for (name, m) in [("process_cov", &self.process_cov), ("meas_cov", &self.meas_cov)] {
            if m.min_eigenvalue() < -1e-12 * m.trace().abs().max(1.0) {
                return Err(DseError::InvalidParameter(format!("enkf {name} is not PSD")));
            }
        }
        Ok(())
    }
}

/// Draws the initial ensemble from the prior.
pub fn enkf_init(prior: &BeliefState, c: &EnkfConfig, mut rng: RngStream) -> Result<Ensemble> {
    c.validate()?;
    let factor = sqrt_factor(&prior.cov)?;
    let members = (0..c.ensemble_size)
        .map(|_| sample_with_factor(&prior.mean, &factor, &mut rng))
        .collect();
    Ok(Ensemble { members, rng })
}

/// Forecast: propagate each member, add process noise, inflate anomalies.
pub fn enkf_predict<M: StateModel + ?Sized>(e: &Ensemble, model: &M, c: &EnkfConfig, dt: f64) -> Result<Ensemble> {
    let mut rng = e.rng.clone();
    let base = rng.next_u64();
    let q_factor = sqrt_factor(&c.process_cov)?;
    let zero = vec![0.0; model.state_dim()];

    let advance = |(i, x): (usize, &Vec<f64>)| -> Result<Vec<f64>> {
        let mut member_rng = RngStream::with_stream(base, i as u64);
        let next = model.propagate(x, dt).map_err(|err| DseError::Member {
            member: i,
            source: Box::new(err),
        })?;
        let w = sample_with_factor(&zero, &q_factor, &mut member_rng);
        let out: Vec<f64> = next.iter().zip(&w).map(|(a, b)| a + b).collect();
        if !out.iter().all(|v| v.is_finite()) {
            return Err(DseError::Member {
                member: i,
                source: Box::new(DseError::NonFiniteState(format!("{out:?}"))),
            });
        }
        Ok(out)
    };
    let members: Vec<Vec<f64>> = if c.parallel {
        e.members.par_iter().enumerate().map(advance).collect::<Result<_>>()?
    } else {
        e.members.iter().enumerate().map(advance).collect::<Result<_>>()?
    };

    let mut out = Ensemble { members, rng };
    if c.inflation != 1.0 {
        inflate(&mut out, c.inflation);
    }
    Ok(out)
}

/// Scales every member's deviation from the ensemble mean by `factor`.
pub fn inflate(e: &mut Ensemble, factor: f64) {
    let mean = e.mean();
    for x in &mut e.members {
        for (xi, mi) in x.iter_mut().zip(&mean) {
            *xi = mi + factor * (*xi - mi);
        }
    }
}

/// Analysis step with perturbed observations.
pub fn enkf_update<M: StateModel + ?Sized>(e: &Ensemble, y: &[f64], model: &M, c: &EnkfConfig) -> Result<Ensemble> {
    if y.len() != model.meas_dim() {
        return Err(DseError::DimensionMismatch(format!(
            "measurement has {} entries, model expects {}",
            y.len(),
            model.meas_dim()
        )));
    }
    let n = e.size();
    let predicted: Vec<Vec<f64>> = e.members.iter().map(|x| model.observe(x)).collect();
    let x_mean = e.mean();
    let y_mean = column_mean(&predicted);

    let norm = 1.0 / (n - 1) as f64;
    let mut pxy = Matrix::zeros(x_mean.len(), y_mean.len());
    let mut pyy = Matrix::zeros(y_mean.len(), y_mean.len());
    for (x, yp) in e.members.iter().zip(&predicted) {
        let dx: Vec<f64> = x.iter().zip(&x_mean).map(|(a, m)| a - m).collect();
        let dy: Vec<f64> = yp.iter().zip(&y_mean).map(|(a, m)| a - m).collect();
        pxy.add_outer(norm, &dx, &dy);
        pyy.add_outer(norm, &dy, &dy);
    }
    let s = symmetrize(&pyy.add(c.meas_cov.as_matrix()));
    let gain = kalman_gain(&pxy, &s)?;

    let mut rng = e.rng.clone();
    let base = rng.next_u64();
    let r_factor = sqrt_factor(&c.meas_cov)?;
    let members = e
        .members
        .iter()
        .zip(&predicted)
        .enumerate()
        .map(|(i, (x, yp))| {
            let mut member_rng = RngStream::with_stream(base, i as u64);
            let yi = sample_with_factor(y, &r_factor, &mut member_rng);
            let innovation: Vec<f64> = yi.iter().zip(yp).map(|(a, b)| a - b).collect();
            let dx = gain.mul_vec(&innovation);
            x.iter().zip(&dx).map(|(a, d)| a + d).collect()
        })
        .collect();
    Ok(Ensemble { members, rng })
}

fn column_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (mi, ri) in m.iter_mut().zip(r) {
            *mi += ri;
        }
    }
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Sample mean and unbiased sample covariance of the ensemble.
pub fn ensemble_stats(e: &Ensemble) -> BeliefState {
    let n = e.size();
    assert!(n >= 2, "ensemble statistics need at least two members");
    let mean = e.mean();
    let mut cov = Matrix::zeros(mean.len(), mean.len());
    let norm = 1.0 / (n - 1) as f64;
    for x in &e.members {
        let d: Vec<f64> = x.iter().zip(&mean).map(|(a, m)| a - m).collect();
        cov.add_outer(norm, &d, &d);
    }
    BeliefState {
        mean,
        cov: symmetrize(&cov),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModel;

    struct Identity;

    impl StateModel for Identity {
        fn state_dim(&self) -> usize {
            2
        }
        fn meas_dim(&self) -> usize {
            1
        }
        fn propagate(&self, x: &[f64], _dt: f64) -> Result<Vec<f64>> {
            Ok(x.to_vec())
        }
        fn observe(&self, x: &[f64]) -> Vec<f64> {
            vec![x[0]]
        }
    }

    fn config(n: usize) -> EnkfConfig {
        EnkfConfig {
            ensemble_size: n,
            process_cov: SymMatrix::zeros(2),
            meas_cov: SymMatrix::from_diag(&[0.01]),
            inflation: 1.0,
            parallel: false,
        }
    }

    fn prior() -> BeliefState {
        BeliefState::new(vec![1.0, -0.5], SymMatrix::from_diag(&[0.2, 0.05])).unwrap()
    }

    #[test]
    fn zero_prior_cov_gives_identical_members() {
        let b = BeliefState::new(vec![1.0, 2.0], SymMatrix::zeros(2)).unwrap();
        let e = enkf_init(&b, &config(20), RngStream::new(3)).unwrap();
        assert!(e.members.iter().all(|m| m == &b.mean));
        let stats = ensemble_stats(&e);
        assert_eq!(stats.cov, SymMatrix::zeros(2));
    }

    #[test]
    fn init_is_reproducible() {
        let a = enkf_init(&prior(), &config(50), RngStream::new(8)).unwrap();
        let b = enkf_init(&prior(), &config(50), RngStream::new(8)).unwrap();
        assert_eq!(a.members, b.members);
    }

    #[test]
    fn identity_dynamics_without_noise_is_stationary() {
        let e = enkf_init(&prior(), &config(30), RngStream::new(1)).unwrap();
        let next = enkf_predict(&e, &Identity, &config(30), 0.1).unwrap();
        assert_eq!(next.members, e.members);
    }

    #[test]
    fn inflation_scales_anomalies() {
        let e = enkf_init(&prior(), &config(30), RngStream::new(1)).unwrap();
        let c = EnkfConfig {
            inflation: 1.1,
            ..config(30)
        };
        let next = enkf_predict(&e, &Identity, &c, 0.1).unwrap();
        let m0 = e.mean();
        let m1 = next.mean();
        for (a, b) in m0.iter().zip(&m1) {
            assert!((a - b).abs() < 1e-12);
        }
        for (x0, x1) in e.members.iter().zip(&next.members) {
            let n0: f64 = x0.iter().zip(&m0).map(|(a, m)| (a - m).powi(2)).sum::<f64>().sqrt();
            let n1: f64 = x1.iter().zip(&m1).map(|(a, m)| (a - m).powi(2)).sum::<f64>().sqrt();
            assert!((n1 - 1.1 * n0).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let model = LinearModel {
            transition: Matrix::from_rows(&[[1.0, 0.1], [-0.2, 0.95]]),
            observation: Matrix::from_rows(&[[1.0, 0.0]]),
        };
        let serial = EnkfConfig {
            process_cov: SymMatrix::from_diag(&[1e-3, 1e-3]),
            ..config(64)
        };
        let parallel = EnkfConfig {
            parallel: true,
            ..serial.clone()
        };
        let mut a = enkf_init(&prior(), &serial, RngStream::new(77)).unwrap();
        let mut b = a.clone();
        for k in 0..20 {
            a = enkf_predict(&a, &model, &serial, 0.1).unwrap();
            b = enkf_predict(&b, &model, &parallel, 0.1).unwrap();
            let y = [0.01 * k as f64];
            a = enkf_update(&a, &y, &model, &serial).unwrap();
            b = enkf_update(&b, &y, &model, &parallel).unwrap();
        }
        assert_eq!(a.members, b.members);
    }

    #[test]
    fn uninformative_measurement_keeps_members() {
        let e = enkf_init(&prior(), &config(40), RngStream::new(5)).unwrap();
        let c = EnkfConfig {
            meas_cov: SymMatrix::from_diag(&[1e12]),
            ..config(40)
        };
        let next = enkf_update(&e, &[3.0], &Identity, &c).unwrap();
        for (x0, x1) in e.members.iter().zip(&next.members) {
            for (a, b) in x0.iter().zip(x1) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_cross_covariance_leaves_members_exactly() {
        // Observation ignores the state entirely, so Pxy = 0 and K = 0.
        let model = LinearModel {
            transition: Matrix::identity(2),
            observation: Matrix::from_rows(&[[0.0, 0.0]]),
        };
        let e = enkf_init(&prior(), &config(10), RngStream::new(5)).unwrap();
        let next = enkf_update(&e, &[1.0], &model, &config(10)).unwrap();
        assert_eq!(next.members, e.members);
    }

    #[test]
    fn two_member_statistics() {
        let m = [1.0, 2.0];
        let a = [0.3, -0.1];
        let e = Ensemble {
            members: vec![vec![m[0] + a[0], m[1] + a[1]], vec![m[0] - a[0], m[1] - a[1]]],
            rng: RngStream::new(0),
        };
        let s = ensemble_stats(&e);
        assert!((s.mean[0] - 1.0).abs() < 1e-15 && (s.mean[1] - 2.0).abs() < 1e-15);
        for i in 0..2 {
            for j in 0..2 {
                assert!((s.cov.get(i, j) - 2.0 * a[i] * a[j]).abs() < 1e-15);
            }
        }
        let next = enkf_update(&e, &[1.1], &Identity, &config(2)).unwrap();
        assert!(next.members.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn too_small_ensemble_rejected() {
        assert!(enkf_init(&prior(), &config(1), RngStream::new(0)).is_err());
    }
}
