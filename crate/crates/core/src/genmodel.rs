//! Fourth-order synchronous generator against a terminal-voltage reference.
//!
//! State is `[δ, Δω, e'_q, e'_d]`, inputs are mechanical torque, field
//! voltage and the terminal voltage magnitude measured at the bus, and the
//! outputs are the active and reactive power leaving the machine. The rotor
//! angle is measured from the terminal-voltage phasor and is never wrapped.

use std::f64::consts::PI;

use crate::error::{DseError, Result};
use crate::matstat::{solve_linear, Matrix};
use crate::model::StateModel;

pub const STATE_DIM: usize = 4;
pub const MEAS_DIM: usize = 2;

/// Machine constants, all in per-unit on the machine base except where noted.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    /// Synchronous speed, elec. rad/s.
    pub omega0: f64,
    /// Inertia coefficient J = 2H, seconds.
    pub inertia_j: f64,
    pub damping_d: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_p: f64,
    pub xq_p: f64,
    /// d-axis open-circuit transient time constant, s.
    pub td0_p: f64,
    /// q-axis open-circuit transient time constant, s.
    pub tq0_p: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            omega0: 2.0 * PI * 60.0,
            inertia_j: 6.4,
            damping_d: 2.0,
            xd: 1.72,
            xq: 1.66,
            xd_p: 0.23,
            xq_p: 0.38,
            td0_p: 8.0,
            tq0_p: 0.4,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("omega0", self.omega0),
            ("inertia_j", self.inertia_j),
            ("xd", self.xd),
            ("xq", self.xq),
            ("xd_p", self.xd_p),
            ("xq_p", self.xq_p),
            ("td0_p", self.td0_p),
            ("tq0_p", self.tq0_p),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(DseError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.damping_d.is_finite() && self.damping_d >= 0.0) {
            return Err(DseError::InvalidParameter(format!(
                "damping_d must be nonnegative, got {}",
                self.damping_d
            )));
        }
        if self.xd < self.xd_p {
            return Err(DseError::InvalidParameter("xd must be at least xd_p".into()));
        }
        if self.xq < self.xq_p {
            return Err(DseError::InvalidParameter("xq must be at least xq_p".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GenState {
    pub delta: f64,
    pub domega: f64,
    pub eq_p: f64,
    pub ed_p: f64,
}

impl GenState {
    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.delta, self.domega, self.eq_p, self.ed_p]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        GenState {
            delta: x[0],
            domega: x[1],
            eq_p: x[2],
            ed_p: x[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    fn axpy(self, h: f64, d: GenState) -> GenState {
        GenState {
            delta: self.delta + h * d.delta,
            domega: self.domega + h * d.domega,
            eq_p: self.eq_p + h * d.eq_p,
            ed_p: self.ed_p + h * d.ed_p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenInput {
    pub tm: f64,
    pub efd: f64,
    pub vt: f64,
}

impl GenInput {
    pub fn validate(&self) -> Result<()> {
        if !(self.tm.is_finite() && self.efd.is_finite() && self.vt.is_finite()) {
            return Err(DseError::InvalidParameter("inputs must be finite".into()));
        }
        if self.vt <= 0.0 {
            return Err(DseError::InvalidParameter(format!(
                "terminal voltage must be positive, got {}",
                self.vt
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub pt: f64,
    pub qt: f64,
}

impl Measurement {
    pub fn to_array(self) -> [f64; MEAS_DIM] {
        [self.pt, self.qt]
    }
}

/// Stator currents `(i_d, i_q)` consistent with the power output map.
pub fn currents(s: &GenState, u: &GenInput, p: &GeneratorParams) -> (f64, f64) {
    let id = (s.eq_p - u.vt * s.delta.cos()) / p.xd_p;
    let iq = u.vt * s.delta.sin() / p.xq;
    (id, iq)
}

pub fn measure(s: &GenState, u: &GenInput, p: &GeneratorParams) -> Measurement {
    let (sd, cd) = s.delta.sin_cos();
    let vt = u.vt;
    let pt = vt / p.xd_p * s.eq_p * sd + 0.5 * vt * vt * (1.0 / p.xq - 1.0 / p.xd_p) * (2.0 * s.delta).sin();
    let qt = vt / p.xd_p * s.eq_p * cd - vt * vt * (sd * sd / p.xq + cd * cd / p.xd_p);
    Measurement { pt, qt }
}

/// Time derivatives of the state, per second.
pub fn dynamics_rhs(s: &GenState, u: &GenInput, p: &GeneratorParams) -> GenState {
    let te = measure(s, u, p).pt;
    let (id, iq) = currents(s, u, p);
    GenState {
        delta: p.omega0 * s.domega,
        domega: (u.tm - te - p.damping_d * s.domega) / p.inertia_j,
        eq_p: (u.efd - s.eq_p - (p.xd - p.xd_p) * id) / p.td0_p,
        ed_p: (-s.ed_p + (p.xq - p.xq_p) * iq) / p.tq0_p,
    }
}

/// Classical RK4 over `dt` split into `substeps` equal steps, inputs held.
pub fn step_rk4(s: &GenState, u: &GenInput, p: &GeneratorParams, dt: f64, substeps: usize) -> Result<GenState> {
    assert!(dt > 0.0, "step_rk4 needs dt > 0");
    assert!(substeps >= 1, "step_rk4 needs at least one substep");
    let h = dt / substeps as f64;
    let mut x = *s;
    for _ in 0..substeps {
        let k1 = dynamics_rhs(&x, u, p);
        let k2 = dynamics_rhs(&x.axpy(0.5 * h, k1), u, p);
        let k3 = dynamics_rhs(&x.axpy(0.5 * h, k2), u, p);
        let k4 = dynamics_rhs(&x.axpy(h, k3), u, p);
        x = GenState {
            delta: x.delta + h / 6.0 * (k1.delta + 2.0 * k2.delta + 2.0 * k3.delta + k4.delta),
            domega: x.domega + h / 6.0 * (k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega),
            eq_p: x.eq_p + h / 6.0 * (k1.eq_p + 2.0 * k2.eq_p + 2.0 * k3.eq_p + k4.eq_p),
            ed_p: x.ed_p + h / 6.0 * (k1.ed_p + 2.0 * k2.ed_p + 2.0 * k3.ed_p + k4.ed_p),
        };
        if !x.is_finite() {
            return Err(DseError::NonFiniteState(format!("{x:?}")));
        }
    }
    Ok(x)
}

const EQUILIBRIUM_TOL: f64 = 1e-10;
const EQUILIBRIUM_MAX_ITER: usize = 200;

fn residual_norm(s: &GenState, u: &GenInput, p: &GeneratorParams) -> f64 {
    dynamics_rhs(s, u, p)
        .to_array()
        .iter()
        .fold(0.0, |m: f64, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) })
}

/// Damped Newton search for a state where all four derivatives vanish.
pub fn find_equilibrium(u: &GenInput, p: &GeneratorParams, guess: &GenState) -> Result<GenState> {
    p.validate()?;
    u.validate()?;
    let mut x = *guess;
    let mut r = residual_norm(&x, u, p);
    for _ in 0..EQUILIBRIUM_MAX_ITER {
        if r <= EQUILIBRIUM_TOL {
            return Ok(x);
        }
        let xa = x.to_array();
        let f0 = dynamics_rhs(&x, u, p).to_array();
        let mut jac = Matrix::zeros(STATE_DIM, STATE_DIM);
        for j in 0..STATE_DIM {
            let h = 1e-7 * xa[j].abs().max(1.0);
            let mut plus = xa;
            let mut minus = xa;
            plus[j] += h;
            minus[j] -= h;
            let fp = dynamics_rhs(&GenState::from_slice(&plus), u, p).to_array();
            let fm = dynamics_rhs(&GenState::from_slice(&minus), u, p).to_array();
            for i in 0..STATE_DIM {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let rhs: Vec<f64> = f0.iter().map(|v| -v).collect();
        let Some(dx) = solve_linear(&jac, &rhs) else {
            break;
        };
        let mut step = 1.0;
        let mut next = x;
        let mut next_r = f64::INFINITY;
        for _ in 0..40 {
            let cand: Vec<f64> = xa.iter().zip(&dx).map(|(a, d)| a + step * d).collect();
            let cand = GenState::from_slice(&cand);
            let cr = residual_norm(&cand, u, p);
            if cr < r {
                next = cand;
                next_r = cr;
                break;
            }
            step *= 0.5;
        }
        if !next_r.is_finite() {
            // No descent along the Newton direction: stuck at a local minimum
            // of the residual, which happens when no equilibrium exists.
            break;
        }
        x = next;
        r = next_r;
    }
    if r <= EQUILIBRIUM_TOL {
        return Ok(x);
    }
    Err(DseError::NoConvergence {
        iterations: EQUILIBRIUM_MAX_ITER,
        residual: r,
    })
}

/// Starting point for [`find_equilibrium`]: the smallest nonnegative angle
/// whose steady-state electrical power reaches `tm`, with `e'_q`, `e'_d` at
/// their steady values for that angle.
pub fn equilibrium_guess(u: &GenInput, p: &GeneratorParams) -> GenState {
    let at = |delta: f64| {
        let eq_p = (u.efd * p.xd_p + (p.xd - p.xd_p) * u.vt * delta.cos()) / p.xd;
        let ed_p = (p.xq - p.xq_p) * u.vt * delta.sin() / p.xq;
        GenState {
            delta,
            domega: 0.0,
            eq_p,
            ed_p,
        }
    };
    let mut best = at(0.0);
    let mut best_p = f64::NEG_INFINITY;
    for k in 0..=1800 {
        let s = at(k as f64 * PI / 1800.0);
        let pe = measure(&s, u, p).pt;
        if pe >= u.tm {
            return s;
        }
        if pe > best_p {
            best_p = pe;
            best = s;
        }
    }
    best
}

/// Generator with a fixed input, exposed to the filters as a [`StateModel`].
#[derive(Debug, Clone)]
pub struct GeneratorSystem<'a> {
    pub params: &'a GeneratorParams,
    pub input: GenInput,
    pub substeps: usize,
}

impl StateModel for GeneratorSystem<'_> {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn meas_dim(&self) -> usize {
        MEAS_DIM
    }

    fn propagate(&self, x: &[f64], dt: f64) -> Result<Vec<f64>> {
        let s = step_rk4(&GenState::from_slice(x), &self.input, self.params, dt, self.substeps)?;
        Ok(s.to_array().to_vec())
    }

    fn observe(&self, x: &[f64]) -> Vec<f64> {
        measure(&GenState::from_slice(x), &self.input, self.params).to_array().to_vec()
    }
}
