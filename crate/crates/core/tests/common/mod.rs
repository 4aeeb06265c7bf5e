//! Exact Kalman filter on a small linear-Gaussian system, written with
//! nalgebra so it shares no code with the crate's own matrix kernel.

#![allow(dead_code)]

use dse_core::matstat::{sample_with_factor, sqrt_factor, Matrix, RngStream, SymMatrix};
use dse_core::model::LinearModel;
use dse_core::ukf::BeliefState;
use nalgebra::{DMatrix, DVector};

pub struct Kalman {
    pub a: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl Kalman {
    pub fn predict(&self, m: &DVector<f64>, p: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (&self.a * m, &self.a * p * self.a.transpose() + &self.q)
    }

    pub fn update(&self, m: &DVector<f64>, p: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let s = &self.h * p * self.h.transpose() + &self.r;
        let k = p * self.h.transpose() * s.clone().try_inverse().unwrap();
        let m = m + &k * (y - &self.h * m);
        let p = p - &k * s * k.transpose();
        (m, p)
    }
}

pub fn to_dm(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn system() -> (LinearModel, Kalman, SymMatrix, SymMatrix) {
    let a = Matrix::from_rows(&[[0.98, 0.1], [-0.15, 0.9]]);
    let h = Matrix::from_rows(&[[1.0, 0.0], [0.5, 1.0]]);
    let q = SymMatrix::from_diag(&[1e-3, 2e-3]);
    let r = SymMatrix::from_diag(&[0.05, 0.02]);
    let kf = Kalman {
        a: to_dm(&a),
        h: to_dm(&h),
        q: to_dm(q.as_matrix()),
        r: to_dm(r.as_matrix()),
    };
    (
        LinearModel {
            transition: a,
            observation: h,
        },
        kf,
        q,
        r,
    )
}

/// Simulated measurement sequence from the true linear system.
pub fn measurements(steps: usize, seed: u64) -> Vec<[f64; 2]> {
    let (model, _, q, r) = system();
    let mut rng = RngStream::new(seed);
    let qf = sqrt_factor(&q).unwrap();
    let rf = sqrt_factor(&r).unwrap();
    let mut x = vec![1.0, -0.5];
    let mut ys = Vec::new();
    for _ in 0..steps {
        x = sample_with_factor(&model.transition.mul_vec(&x), &qf, &mut rng);
        let y = sample_with_factor(&model.observation.mul_vec(&x), &rf, &mut rng);
        ys.push([y[0], y[1]]);
    }
    ys
}

pub fn prior() -> BeliefState {
    BeliefState::new(vec![0.5, 0.0], SymMatrix::from_diag(&[0.3, 0.2])).unwrap()
}


/// Runs the UKF next to the exact filter for 100 steps and returns the largest
/// mean and covariance deviations.
pub fn ukf_vs_kalman(alpha: f64, beta: f64, kappa: f64) -> (f64, f64) {
    use dse_core::ukf::{ukf_predict, ukf_update, UkfConfig};
    let (model, kf, q, r) = system();
    let cfg = UkfConfig {
        alpha,
        beta,
        kappa,
        process_cov: q,
        meas_cov: r,
    };
    cfg.validate(2).unwrap();
    let mut b = prior();
    let mut m = DVector::from_vec(b.mean.clone());
    let mut p = to_dm(b.cov.as_matrix());
    let (mut mean_err, mut cov_err) = (0.0f64, 0.0f64);
    for y in measurements(100, 17) {
        b = ukf_predict(&b, &model, &cfg, 0.1).unwrap();
        b = ukf_update(&b, &y, &model, &cfg).unwrap();
        (m, p) = kf.predict(&m, &p);
        (m, p) = kf.update(&m, &p, &DVector::from_row_slice(&y));
        for i in 0..2 {
            mean_err = mean_err.max((b.mean[i] - m[i]).abs());
            for j in 0..2 {
                cov_err = cov_err.max((b.cov.get(i, j) - p[(i, j)]).abs());
            }
        }
    }
    (mean_err, cov_err)
}

/// Runs the EnKF next to the exact filter; returns per-step mean deviations
/// and the exact posterior variances.
pub fn enkf_vs_kalman(n: usize, steps: usize, seed: u64) -> Vec<([f64; 2], [f64; 2])> {
    use dse_core::enkf::{enkf_init, enkf_predict, enkf_update, ensemble_stats, EnkfConfig};
    let (model, kf, q, r) = system();
    let cfg = EnkfConfig {
        ensemble_size: n,
        process_cov: q,
        meas_cov: r,
        inflation: 1.0,
        parallel: true,
    };
    let b = prior();
    let mut e = enkf_init(&b, &cfg, RngStream::new(seed)).unwrap();
    let mut m = DVector::from_vec(b.mean.clone());
    let mut p = to_dm(b.cov.as_matrix());
    let mut out = Vec::new();
    for y in measurements(steps, 17) {
        e = enkf_predict(&e, &model, &cfg, 0.1).unwrap();
        e = enkf_update(&e, &y, &model, &cfg).unwrap();
        (m, p) = kf.predict(&m, &p);
        (m, p) = kf.update(&m, &p, &DVector::from_row_slice(&y));
        let s = ensemble_stats(&e);
        out.push(([s.mean[0] - m[0], s.mean[1] - m[1]], [p[(0, 0)], p[(1, 1)]]));
    }
    out
}
