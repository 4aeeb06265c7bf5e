//! Experiment orchestration: filter runs over PMU streams, MSE scoring,
//! seeded multi-trial comparison and report files.

use std::fmt;
use std::hash::Hasher;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::csvio::{fmt_f64, read_table, write_table};
use crate::enkf::{enkf_init, enkf_predict, enkf_update, ensemble_stats, EnkfConfig};
use crate::error::{DseError, Result};
use crate::genmodel::{GenInput, GeneratorParams, GeneratorSystem, STATE_DIM};
use crate::matstat::{RngStream, SymMatrix};
use crate::scenario::{corrupt, simulate_truth, InputSchedule, PmuRecord, ScenarioConfig, TruthTrajectory};
use crate::ukf::{ukf_predict, ukf_update, BeliefState, UkfConfig};

pub const STATE_NAMES: [&str; STATE_DIM] = ["delta", "domega", "eq_p", "ed_p"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Ukf,
    Enkf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 2] = [FilterKind::Ukf, FilterKind::Enkf];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Ukf => "ukf",
            FilterKind::Enkf => "enkf",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ukf" => Ok(FilterKind::Ukf),
            "enkf" => Ok(FilterKind::Enkf),
            other => Err(format!("unknown filter `{other}` (expected ukf or enkf)")),
        }
    }
}

/// Everything a filter needs besides the PMU stream itself.
#[derive(Debug, Clone)]
pub struct FilterSetup<'a> {
    pub params: &'a GeneratorParams,
    /// Known mechanical torque and field voltage; `vt` is taken from records.
    pub schedule: &'a InputSchedule,
    pub substeps: usize,
    pub ukf: &'a UkfConfig,
    pub enkf: &'a EnkfConfig,
    /// Seed stream for the ensemble.
    pub enkf_rng: RngStream,
}

#[derive(Debug, Clone)]
pub struct FilterRun {
    pub kind: FilterKind,
    /// Posterior belief after each record.
    pub beliefs: Vec<BeliefState>,
    /// Wall-clock seconds spent on predict + update per record.
    pub step_seconds: Vec<f64>,
    /// Checksum of the record stream the filter consumed.
    pub stream_checksum: u64,
}

/// Checksum over the bit patterns of a record stream.
pub fn stream_checksum(records: &[PmuRecord]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for r in records {
        for v in [r.t, r.pt, r.qt, r.vt] {
            h.write_u64(v.to_bits());
        }
    }
    h.finish()
}

enum FilterState {
    Ukf(BeliefState),
    Enkf(crate::enkf::Ensemble),
}

/// Runs one filter over a record stream.
///
/// The prior describes the state at the first record's timestamp, so the
/// first record is assimilated without a forecast. Each later record is
/// preceded by a forecast over the record spacing with the previous record's
/// terminal voltage held, matching the zero-order hold of the input.
pub fn run_filter(records: &[PmuRecord], kind: FilterKind, setup: &FilterSetup<'_>, prior: &BeliefState) -> Result<FilterRun> {
    let mut beliefs = Vec::with_capacity(records.len());
    let mut step_seconds = Vec::with_capacity(records.len());
    let mut state = match kind {
        FilterKind::Ukf => {
            setup.ukf.validate(prior.dim())?;
            FilterState::Ukf(prior.clone())
        }
        FilterKind::Enkf => FilterState::Enkf(enkf_init(prior, setup.enkf, setup.enkf_rng.clone())?),
    };

    for (k, rec) in records.iter().enumerate() {
        let started = Instant::now();
        let step = |e: DseError| DseError::FilterStep {
            step: k,
            source: Box::new(e),
        };
        let forecast = if k > 0 {
            let prev = &records[k - 1];
            let input = GenInput {
                vt: prev.vt,
                ..setup.schedule.at(prev.t)
            };
            Some((
                GeneratorSystem {
                    params: setup.params,
                    input,
                    substeps: setup.substeps,
                },
                rec.t - prev.t,
            ))
        } else {
            None
        };
        let observer = GeneratorSystem {
            params: setup.params,
            input: GenInput {
                vt: rec.vt,
                ..setup.schedule.at(rec.t)
            },
            substeps: setup.substeps,
        };
        let y = [rec.pt, rec.qt];

        state = match state {
            FilterState::Ukf(b) => {
                let b = match &forecast {
                    Some((model, dt)) => ukf_predict(&b, model, setup.ukf, *dt).map_err(step)?,
                    None => b,
                };
                let b = ukf_update(&b, &y, &observer, setup.ukf).map_err(step)?;
                step_seconds.push(started.elapsed().as_secs_f64());
                beliefs.push(b.clone());
                FilterState::Ukf(b)
            }
            FilterState::Enkf(e) => {
                let e = match &forecast {
                    Some((model, dt)) => enkf_predict(&e, model, setup.enkf, *dt).map_err(step)?,
                    None => e,
                };
                let e = enkf_update(&e, &y, &observer, setup.enkf).map_err(step)?;
                step_seconds.push(started.elapsed().as_secs_f64());
                beliefs.push(ensemble_stats(&e));
                FilterState::Enkf(e)
            }
        };
    }
    Ok(FilterRun {
        kind,
        beliefs,
        step_seconds,
        stream_checksum: stream_checksum(records),
    })
}

/// Per-state mean squared error over ticks with `t >= warmup`.
pub fn mse(estimates: &[BeliefState], truth: &TruthTrajectory, warmup: f64) -> Result<[f64; STATE_DIM]> {
    if estimates.len() != truth.len() {
        return Err(DseError::LengthMismatch {
            left: estimates.len(),
            right: truth.len(),
        });
    }
    let mut acc = [0.0; STATE_DIM];
    let mut count = 0usize;
    for ((b, s), &t) in estimates.iter().zip(&truth.states).zip(&truth.times) {
        if t < warmup {
            continue;
        }
        for (a, (e, x)) in acc.iter_mut().zip(b.mean.iter().zip(s.to_array())) {
            *a += (e - x) * (e - x);
        }
        count += 1;
    }
    if count == 0 {
        return Err(DseError::InvalidParameter(format!("no samples at or after warmup {warmup} s")));
    }
    Ok(acc.map(|a| a / count as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub ukf: UkfConfig,
    pub enkf: EnkfConfig,
    /// Base seed for ensemble streams; defaults to the scenario seed.
    pub enkf_seed: Option<u64>,
    pub trials: usize,
    /// Added to the true initial state to form the prior mean.
    pub prior_mean_offset: [f64; STATE_DIM],
    pub prior_cov: SymMatrix,
    /// Seconds excluded from the start of every MSE window.
    pub warmup: f64,
    /// Worker threads for trials; `None` uses all cores.
    pub workers: Option<usize>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            ukf: UkfConfig::default(),
            enkf: EnkfConfig::default(),
            enkf_seed: None,
            trials: 11,
            prior_mean_offset: [0.1, 0.001, 0.05, 0.05],
            prior_cov: SymMatrix::from_diag(&[1e-2, 1e-4, 1e-2, 1e-2]),
            warmup: 1.0,
            workers: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.ukf.validate(STATE_DIM)?;
        self.enkf.validate()?;
        if self.trials == 0 {
            return Err(DseError::InvalidParameter("trials must be at least 1".into()));
        }
        if self.prior_cov.dim() != STATE_DIM || self.prior_cov.min_eigenvalue() < -1e-12 {
            return Err(DseError::InvalidParameter("prior covariance must be a 4x4 PSD matrix".into()));
        }
        if self.ukf.process_cov.dim() != STATE_DIM || self.enkf.process_cov.dim() != STATE_DIM {
            return Err(DseError::InvalidParameter("process covariances must be 4x4".into()));
        }
        if self.ukf.meas_cov.dim() != 2 || self.enkf.meas_cov.dim() != 2 {
            return Err(DseError::InvalidParameter("measurement covariances must be 2x2".into()));
        }
        if !(self.warmup >= 0.0) {
            return Err(DseError::InvalidParameter("warmup must be nonnegative".into()));
        }
        Ok(())
    }

    /// Prior belief around the given true initial state.
    pub fn prior(&self, truth0: &crate::genmodel::GenState) -> BeliefState {
        let mean = truth0
            .to_array()
            .iter()
            .zip(self.prior_mean_offset)
            .map(|(x, o)| x + o)
            .collect();
        BeliefState {
            mean,
            cov: self.prior_cov.clone(),
        }
    }

    /// Noise and ensemble streams for one trial.
    pub fn trial_streams(&self, trial: usize) -> (RngStream, RngStream) {
        let seed = self.scenario.seed.wrapping_add(trial as u64);
        let enkf_seed = self.enkf_seed.unwrap_or(self.scenario.seed).wrapping_add(trial as u64);
        (RngStream::with_stream(seed, 0), RngStream::with_stream(enkf_seed, 1))
    }
}

/// Symmetry and spectrum checks over every posterior covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceAudit {
    pub checked: usize,
    pub asymmetric: usize,
    pub min_eigenvalue: f64,
}

impl Default for CovarianceAudit {
    fn default() -> Self {
        CovarianceAudit {
            checked: 0,
            asymmetric: 0,
            min_eigenvalue: f64::INFINITY,
        }
    }
}

impl CovarianceAudit {
    pub fn observe(&mut self, b: &BeliefState) {
        self.checked += 1;
        if !b.cov.is_exactly_symmetric() {
            self.asymmetric += 1;
        }
        self.min_eigenvalue = self.min_eigenvalue.min(b.cov.min_eigenvalue());
    }

    pub fn merge(&mut self, other: &CovarianceAudit) {
        self.checked += other.checked;
        self.asymmetric += other.asymmetric;
        self.min_eigenvalue = self.min_eigenvalue.min(other.min_eigenvalue);
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.asymmetric == 0 && self.min_eigenvalue >= -tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSummary {
    pub kind: FilterKind,
    /// Median across trials, per state.
    pub median_mse: [f64; STATE_DIM],
    pub trial_mse: Vec<[f64; STATE_DIM]>,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseReport {
    pub filters: Vec<FilterSummary>,
    pub trials: usize,
    pub seed: u64,
}

impl MseReport {
    pub fn filter(&self, kind: FilterKind) -> Option<&FilterSummary> {
        self.filters.iter().find(|f| f.kind == kind)
    }
}

/// Outputs of one trial that callers may want beyond the MSE numbers.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub records: Vec<PmuRecord>,
    pub runs: Vec<FilterRun>,
    pub mse: Vec<[f64; STATE_DIM]>,
    pub audit: CovarianceAudit,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MseReport,
    pub audit: CovarianceAudit,
    pub truth: TruthTrajectory,
    /// Per-trial results in trial order.
    pub trials: Vec<TrialOutcome>,
}

/// Runs one seeded trial: corrupt the truth, run both filters on the same
/// stream from the same prior, score them.
pub fn run_trial(cfg: &ExperimentConfig, truth: &TruthTrajectory, trial: usize) -> Result<TrialOutcome> {
    let (mut noise_rng, enkf_rng) = cfg.trial_streams(trial);
    let records = corrupt(truth, &cfg.scenario.noise, &mut noise_rng);
    let schedule = cfg.scenario.schedule();
    let setup = FilterSetup {
        params: &cfg.scenario.params,
        schedule: &schedule,
        substeps: cfg.scenario.substeps,
        ukf: &cfg.ukf,
        enkf: &cfg.enkf,
        enkf_rng,
    };
    let prior = cfg.prior(&truth.states[0]);
    let mut runs = Vec::new();
    let mut scores = Vec::new();
    let mut audit = CovarianceAudit::default();
    for kind in FilterKind::ALL {
        let run = run_filter(&records, kind, &setup, &prior)?;
        run.beliefs.iter().for_each(|b| audit.observe(b));
        scores.push(mse(&run.beliefs, truth, cfg.warmup)?);
        runs.push(run);
    }
    let expected = stream_checksum(&records);
    if runs.iter().any(|r| r.stream_checksum != expected) {
        return Err(DseError::InvalidParameter("filters consumed different record streams".into()));
    }
    Ok(TrialOutcome {
        records,
        runs,
        mse: scores,
        audit,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let truth = simulate_truth(&cfg.scenario)?;
    let run_all = || -> Vec<Result<TrialOutcome>> {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| {
                run_trial(cfg, &truth, i).map_err(|e| DseError::Trial {
                    trial: i,
                    source: Box::new(e),
                })
            })
            .collect()
    };
    let results = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| DseError::InvalidParameter(format!("thread pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };
    let trials = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut audit = CovarianceAudit::default();
    trials.iter().for_each(|t| audit.merge(&t.audit));
    let filters = FilterKind::ALL
        .iter()
        .enumerate()
        .map(|(fi, &kind)| {
            let trial_mse: Vec<[f64; STATE_DIM]> = trials.iter().map(|t| t.mse[fi]).collect();
            let mut median_mse = [0.0; STATE_DIM];
            for (s, m) in median_mse.iter_mut().enumerate() {
                *m = median(trial_mse.iter().map(|v| v[s]).collect());
            }
            let mut times: Vec<f64> = trials
                .iter()
                .flat_map(|t| t.runs[fi].step_seconds.iter().map(|s| s * 1e3))
                .collect();
            let mean_ms = if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 };
            let p95_ms = percentile(&mut times, 0.95);
            FilterSummary {
                kind,
                median_mse,
                trial_mse,
                mean_ms,
                p95_ms,
            }
        })
        .collect();
    Ok(ExperimentOutcome {
        report: MseReport {
            filters,
            trials: cfg.trials,
            seed: cfg.scenario.seed,
        },
        audit,
        truth,
        trials,
    })
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Nearest-rank percentile, `q` in (0, 1].
pub fn percentile(v: &mut [f64], q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let rank = (q * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

pub const MSE_HEADER: [&str; 5] = ["filter", "state", "mse", "trials", "seed"];
pub const TIMING_HEADER: [&str; 3] = ["filter", "mean_ms", "p95_ms"];

/// Writes `mse.csv` and `timing.csv` into `dir`, which must exist.
pub fn emit_report(r: &MseReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(DseError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        ));
    }
    let mse_path = dir.join("mse.csv");
    let mut w = csv_writer(&mse_path)?;
    w.write_record(MSE_HEADER).map_err(|e| csv_err(&mse_path, e))?;
    for f in &r.filters {
        for (s, name) in STATE_NAMES.iter().enumerate() {
            w.write_record([
                f.kind.name().to_string(),
                name.to_string(),
                fmt_f64(f.median_mse[s]),
                r.trials.to_string(),
                r.seed.to_string(),
            ])
            .map_err(|e| csv_err(&mse_path, e))?;
        }
    }
    w.flush().map_err(|e| DseError::io(&mse_path, e))?;

    let timing_path = dir.join("timing.csv");
    let mut w = csv_writer(&timing_path)?;
    w.write_record(TIMING_HEADER).map_err(|e| csv_err(&timing_path, e))?;
    for f in &r.filters {
        w.write_record([f.kind.name().to_string(), fmt_f64(f.mean_ms), fmt_f64(f.p95_ms)])
            .map_err(|e| csv_err(&timing_path, e))?;
    }
    w.flush().map_err(|e| DseError::io(&timing_path, e))?;
    Ok(vec![mse_path, timing_path])
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| DseError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> DseError {
    DseError::io(path, std::io::Error::other(e.to_string()))
}

/// One row of `mse.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MseRow {
    pub filter: FilterKind,
    pub state: String,
    pub mse: f64,
    pub trials: usize,
    pub seed: u64,
}

pub fn read_mse_csv(path: &Path) -> Result<Vec<MseRow>> {
    let origin = path.display().to_string();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != MSE_HEADER {
        return Err(DseError::parse(&origin, 1, "unexpected mse.csv header"));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| DseError::parse(&origin, line, e.to_string()))?;
        let bad = |what: &str| DseError::parse(&origin, line, format!("bad {what}"));
        rows.push(MseRow {
            filter: rec[0].parse().map_err(|_| bad("filter"))?,
            state: rec[1].to_string(),
            mse: rec[2].parse().map_err(|_| bad("mse"))?,
            trials: rec[3].parse().map_err(|_| bad("trials"))?,
            seed: rec[4].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(rows)
}

pub const TRUTH_HEADER: [&str; 8] = ["t", "delta", "domega", "eq_p", "ed_p", "pt", "qt", "vt"];
pub const ESTIMATE_HEADER: [&str; 9] = [
    "t", "delta", "domega", "eq_p", "ed_p", "var_delta", "var_domega", "var_eq_p", "var_ed_p",
];

pub fn write_truth(truth: &TruthTrajectory, path: &Path) -> Result<()> {
    let rows = (0..truth.len()).map(|i| {
        let s = truth.states[i].to_array();
        let m = truth.clean_measurements[i];
        [truth.times[i], s[0], s[1], s[2], s[3], m.pt, m.qt, truth.inputs[i].vt]
    });
    write_table(path, &TRUTH_HEADER, rows)
}

/// Time and state columns of a truth file.
pub fn read_truth_states(path: &Path) -> Result<(Vec<f64>, Vec<[f64; STATE_DIM]>)> {
    let rows = read_table(path, &TRUTH_HEADER)?;
    Ok(rows.iter().map(|r| (r[0], [r[1], r[2], r[3], r[4]])).unzip())
}

pub fn write_estimates(times: &[f64], beliefs: &[BeliefState], path: &Path) -> Result<()> {
    let rows = times.iter().zip(beliefs).map(|(&t, b)| {
        let d = b.cov.diag();
        [t, b.mean[0], b.mean[1], b.mean[2], b.mean[3], d[0], d[1], d[2], d[3]]
    });
    write_table(path, &ESTIMATE_HEADER, rows)
}

pub fn read_estimates(path: &Path) -> Result<(Vec<f64>, Vec<[f64; STATE_DIM]>)> {
    let rows = read_table(path, &ESTIMATE_HEADER)?;
    Ok(rows.iter().map(|r| (r[0], [r[1], r[2], r[3], r[4]])).unzip())
}
