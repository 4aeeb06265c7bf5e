//! Truth trajectories, PMU record synthesis and the record file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::csvio::{read_table, write_table};
use crate::error::{DseError, Result};
use crate::genmodel::{equilibrium_guess, find_equilibrium, measure, step_rk4, GenInput, GenState, GeneratorParams, Measurement};
use crate::matstat::RngStream;
use crate::mixnoise::NoiseSpec;

/// Which input channel an event changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputField {
    Tm,
    Efd,
    Vt,
}

impl FromStr for InputField {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "tm" => Ok(InputField::Tm),
            "efd" => Ok(InputField::Efd),
            "vt" => Ok(InputField::Vt),
            other => Err(format!("unknown input field `{other}` (expected tm, efd or vt)")),
        }
    }
}

impl fmt::Display for InputField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputField::Tm => "tm",
            InputField::Efd => "efd",
            InputField::Vt => "vt",
        })
    }
}

/// Step change of one input at a given time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputEvent {
    pub time: f64,
    pub field: InputField,
    pub value: f64,
}

impl InputEvent {
    pub fn apply(&self, u: &mut GenInput) {
        match self.field {
            InputField::Tm => u.tm = self.value,
            InputField::Efd => u.efd = self.value,
            InputField::Vt => u.vt = self.value,
        }
    }
}

/// Piecewise-constant input history: initial inputs plus step events.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSchedule {
    pub initial: GenInput,
    pub events: Vec<InputEvent>,
}

impl InputSchedule {
    /// Inputs in effect at `t` (events with `time <= t` applied).
    pub fn at(&self, t: f64) -> GenInput {
        let mut u = self.initial;
        for e in self.events.iter().take_while(|e| e.time <= t) {
            e.apply(&mut u);
        }
        u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub params: GeneratorParams,
    pub initial_inputs: GenInput,
    pub events: Vec<InputEvent>,
    /// Seconds.
    pub duration: f64,
    /// PMU samples per second.
    pub pmu_rate: f64,
    /// RK4 steps per PMU interval.
    pub substeps: usize,
    pub noise: NoiseSpec,
    pub seed: u64,
    /// Accept PMU rates other than 30 and 60.
    pub allow_any_rate: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            params: GeneratorParams::default(),
            initial_inputs: GenInput {
                tm: 0.8,
                efd: 2.3,
                vt: 1.0,
            },
            events: vec![InputEvent {
                time: 3.5,
                field: InputField::Vt,
                value: 1.05,
            }],
            duration: 10.0,
            pmu_rate: 60.0,
            substeps: 4,
            noise: NoiseSpec::default(),
            seed: 2019,
            allow_any_rate: false,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.initial_inputs.validate()?;
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(DseError::InvalidParameter(format!("duration must be >= 0, got {}", self.duration)));
        }
        if !(self.pmu_rate > 0.0 && self.pmu_rate.is_finite()) {
            return Err(DseError::InvalidParameter(format!("pmu_rate must be positive, got {}", self.pmu_rate)));
        }
        if !self.allow_any_rate && self.pmu_rate != 30.0 && self.pmu_rate != 60.0 {
            return Err(DseError::InvalidParameter(format!(
                "pmu_rate {} is not a standard PMU rate (30 or 60); set scenario.allow_any_rate to override",
                self.pmu_rate
            )));
        }
        if self.substeps == 0 {
            return Err(DseError::InvalidParameter("substeps must be at least 1".into()));
        }
        let mut last = f64::NEG_INFINITY;
        for e in &self.events {
            if !(e.time > last) {
                return Err(DseError::InvalidParameter("event times must be strictly increasing".into()));
            }
            if e.time < 0.0 || e.time > self.duration {
                return Err(DseError::InvalidParameter(format!(
                    "event at t={} lies outside [0, {}]",
                    e.time, self.duration
                )));
            }
            let mut u = self.initial_inputs;
            e.apply(&mut u);
            u.validate()?;
            last = e.time;
        }
        Ok(())
    }

    pub fn schedule(&self) -> InputSchedule {
        InputSchedule {
            initial: self.initial_inputs,
            events: self.events.clone(),
        }
    }

    /// Number of PMU ticks including t = 0.
    pub fn tick_count(&self) -> usize {
        (self.duration * self.pmu_rate).round() as usize + 1
    }

    pub fn initial_state(&self) -> Result<GenState> {
        find_equilibrium(
            &self.initial_inputs,
            &self.params,
            &equilibrium_guess(&self.initial_inputs, &self.params),
        )
    }
}

/// One PMU sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmuRecord {
    pub t: f64,
    pub pt: f64,
    pub qt: f64,
    pub vt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<GenState>,
    pub clean_measurements: Vec<Measurement>,
    /// Inputs in effect at each tick.
    pub inputs: Vec<GenInput>,
}

impl TruthTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Integrates the machine from equilibrium, applying events, and samples
/// state and clean power output at every PMU tick.
pub fn simulate_truth(cfg: &ScenarioConfig) -> Result<TruthTrajectory> {
    cfg.validate()?;
    let p = &cfg.params;
    let ticks = cfg.tick_count();
    let steps_per_sec = cfg.pmu_rate * cfg.substeps as f64;
    let h = 1.0 / steps_per_sec;

    let mut state = cfg.initial_state()?;
    let mut u = cfg.initial_inputs;
    let mut pending = cfg.events.iter().peekable();

    let mut out = TruthTrajectory {
        times: Vec::with_capacity(ticks),
        states: Vec::with_capacity(ticks),
        clean_measurements: Vec::with_capacity(ticks),
        inputs: Vec::with_capacity(ticks),
    };
    let total_steps = (ticks - 1) * cfg.substeps;
    for k in 0..=total_steps {
        let t = k as f64 / steps_per_sec;
        while let Some(e) = pending.next_if(|e| e.time <= t) {
            e.apply(&mut u);
        }
        if k % cfg.substeps == 0 {
            out.times.push(k as f64 / steps_per_sec);
            out.states.push(state);
            out.clean_measurements.push(measure(&state, &u, p));
            out.inputs.push(u);
        }
        if k < total_steps {
            state = step_rk4(&state, &u, p, h, 1)?;
        }
    }
    Ok(out)
}

/// Adds mixture noise to the power channels (and to `vt` when configured).
pub fn corrupt(traj: &TruthTrajectory, noise: &NoiseSpec, rng: &mut RngStream) -> Vec<PmuRecord> {
    traj.times
        .iter()
        .zip(&traj.clean_measurements)
        .zip(&traj.inputs)
        .map(|((&t, m), u)| {
            let pt = m.pt + noise.pt.sample(rng);
            let qt = m.qt + noise.qt.sample(rng);
            let vt = match &noise.vt {
                Some(g) => u.vt + g.sample(rng),
                None => u.vt,
            };
            PmuRecord { t, pt, qt, vt }
        })
        .collect()
}

pub const RECORD_HEADER: [&str; 4] = ["t", "pt", "qt", "vt"];

pub fn write_records(records: &[PmuRecord], path: &Path) -> Result<()> {
    write_table(path, &RECORD_HEADER, records.iter().map(|r| [r.t, r.pt, r.qt, r.vt]))
}

pub fn read_records(path: &Path) -> Result<Vec<PmuRecord>> {
    let rows = read_table(path, &RECORD_HEADER)?;
    let origin = path.display().to_string();
    let mut out: Vec<PmuRecord> = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let line = i + 2;
        let rec = PmuRecord {
            t: row[0],
            pt: row[1],
            qt: row[2],
            vt: row[3],
        };
        if !row.iter().all(|v| v.is_finite()) {
            return Err(DseError::parse(&origin, line, "non-finite value"));
        }
        if rec.t < 0.0 {
            return Err(DseError::parse(&origin, line, format!("negative timestamp {}", rec.t)));
        }
        if let Some(prev) = out.last() {
            if rec.t <= prev.t {
                return Err(DseError::parse(
                    &origin,
                    line,
                    format!("timestamp {} does not increase (previous {})", rec.t, prev.t),
                ));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::find_equilibrium;
    use crate::mixnoise::{paper_bimodal, GaussianMixture};

    fn quiet() -> ScenarioConfig {
        ScenarioConfig {
            events: vec![],
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn default_scenario_shape() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.tick_count(), 601);
        let traj = simulate_truth(&cfg).unwrap();
        assert_eq!(traj.len(), 601);
        for (i, t) in traj.times.iter().enumerate() {
            assert!((t - i as f64 / 60.0).abs() < 1e-12);
        }
    }

    #[test]
    fn no_events_stays_at_equilibrium() {
        let cfg = quiet();
        let traj = simulate_truth(&cfg).unwrap();
        let s0 = traj.states[0].to_array();
        for s in &traj.states {
            for (a, b) in s.to_array().iter().zip(s0) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn zero_duration_is_single_sample() {
        let cfg = ScenarioConfig {
            duration: 0.0,
            events: vec![],
            ..ScenarioConfig::default()
        };
        assert_eq!(simulate_truth(&cfg).unwrap().len(), 1);
    }

    #[test]
    fn voltage_step_settles_to_new_equilibrium() {
        let cfg = ScenarioConfig {
            duration: 40.0,
            ..ScenarioConfig::default()
        };
        let traj = simulate_truth(&cfg).unwrap();
        let u_after = GenInput {
            vt: 1.05,
            ..cfg.initial_inputs
        };
        let target = find_equilibrium(&u_after, &cfg.params, traj.states.last().unwrap()).unwrap();
        let start = traj.states[0];
        // Transient: the rotor swings after the event.
        let i_event = (3.5 * 60.0) as usize;
        let peak = traj.states[i_event..]
            .iter()
            .map(|s| (s.delta - target.delta).abs())
            .fold(0.0, f64::max);
        assert!(peak > 1e-3);
        assert!((start.delta - target.delta).abs() > 1e-3);
        let end = traj.states.last().unwrap();
        for (a, b) in end.to_array().iter().zip(target.to_array()) {
            assert!((a - b).abs() <= 0.01 * b.abs().max(1e-2), "{a} vs {b}");
        }
    }

    #[test]
    fn events_apply_at_first_step_at_or_after_time() {
        let cfg = ScenarioConfig::default();
        let traj = simulate_truth(&cfg).unwrap();
        for (t, u) in traj.times.iter().zip(&traj.inputs) {
            let expected = if *t >= 3.5 { 1.05 } else { 1.0 };
            assert_eq!(u.vt.to_bits(), f64::to_bits(expected), "t={t}");
        }
    }

    #[test]
    fn validation_catches_bad_configs() {
        let bad_rate = ScenarioConfig {
            pmu_rate: 50.0,
            ..ScenarioConfig::default()
        };
        assert!(bad_rate.validate().is_err());
        assert!(ScenarioConfig {
            allow_any_rate: true,
            ..bad_rate
        }
        .validate()
        .is_ok());
        let unordered = ScenarioConfig {
            events: vec![
                InputEvent { time: 2.0, field: InputField::Vt, value: 1.0 },
                InputEvent { time: 1.0, field: InputField::Tm, value: 0.5 },
            ],
            ..ScenarioConfig::default()
        };
        assert!(unordered.validate().is_err());
        let late = ScenarioConfig {
            events: vec![InputEvent { time: 11.0, field: InputField::Vt, value: 1.0 }],
            ..ScenarioConfig::default()
        };
        assert!(late.validate().is_err());
    }

    #[test]
    fn corrupt_with_negligible_noise_is_clean() {
        let cfg = quiet();
        let traj = simulate_truth(&cfg).unwrap();
        let tiny = GaussianMixture::normal(0.0, 1e-30).unwrap();
        let noise = NoiseSpec {
            pt: tiny.clone(),
            qt: tiny,
            vt: None,
        };
        let recs = corrupt(&traj, &noise, &mut RngStream::new(1));
        for (r, m) in recs.iter().zip(&traj.clean_measurements) {
            assert!((r.pt - m.pt).abs() < 1e-10);
            assert!((r.qt - m.qt).abs() < 1e-10);
            assert_eq!(r.vt, 1.0);
        }
    }

    #[test]
    fn corrupt_residual_variance() {
        let cfg = ScenarioConfig {
            duration: 10_000.0 / 60.0,
            events: vec![],
            ..ScenarioConfig::default()
        };
        let traj = simulate_truth(&cfg).unwrap();
        let noise = NoiseSpec::default();
        let recs = corrupt(&traj, &noise, &mut RngStream::new(99));
        let res: Vec<f64> = recs.iter().zip(&traj.clean_measurements).map(|(r, m)| r.pt - m.pt).collect();
        let n = res.len() as f64;
        let mean = res.iter().sum::<f64>() / n;
        let var = res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let (_, target) = paper_bimodal().moments();
        assert!((var - target).abs() < 0.1 * target, "{var}");
        assert!(mean.abs() < 3.0 * (target / n).sqrt());
    }

    #[test]
    fn corrupt_is_deterministic() {
        let traj = simulate_truth(&ScenarioConfig::default()).unwrap();
        let a = corrupt(&traj, &NoiseSpec::default(), &mut RngStream::new(4));
        let b = corrupt(&traj, &NoiseSpec::default(), &mut RngStream::new(4));
        assert_eq!(a, b);
    }

    #[test]
    fn records_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        let traj = simulate_truth(&ScenarioConfig::default()).unwrap();
        let recs = corrupt(&traj, &NoiseSpec::default(), &mut RngStream::new(4));
        write_records(&recs, &path).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);

        write_records(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "t,pt,qt,vt\n");
        assert!(read_records(&path).unwrap().is_empty());
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,pt,qt,vt\n0.0,1,0,1\n0.5,1,0,1\n0.25,1,0,1\n").unwrap();
        match read_records(&path) {
            Err(DseError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&path, "t,pt,qt,vt\n0.0,1,zero,1\n").unwrap();
        assert!(matches!(read_records(&path), Err(DseError::Parse { line: 2, .. })));
    }
}
