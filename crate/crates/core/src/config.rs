//! Flat `key = value` experiment configuration.
//!
//! Keys carry a dotted section prefix (`enkf.ensemble_size = 100`). Blank
//! lines and `#` comments are ignored. Lists use `,` between numbers and `;`
//! between entries:
//!
//! ```text
//! scenario.events = 3.5:vt:1.05; 6.0:tm:0.7
//! noise.pt = 0.9,0,1e-4; 0.1,0,1e-3
//! ukf.q_diag = 1e-8,1e-8,1e-8,1e-8
//! ```
//!
//! Unset keys keep their defaults; unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{DseError, Result};
use crate::harness::ExperimentConfig;
use crate::matstat::SymMatrix;
use crate::mixnoise::GaussianMixture;
use crate::scenario::{InputEvent, InputField};

/// Parsed key/value pairs with the line each came from.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    origin: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(DseError::parse(origin, line, format!("expected `key = value`, found `{content}`")));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(DseError::parse(origin, line, "empty key"));
            }
            if entries.insert(key.to_string(), (line, value.trim().to_string())).is_some() {
                return Err(DseError::parse(origin, line, format!("duplicate key `{key}`")));
            }
        }
        Ok(KeyValues {
            origin: origin.to_string(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DseError::io(path, e))?;
        KeyValues::parse(&text, &path.display().to_string())
    }

    fn err(&self, line: usize, message: impl Into<String>) -> DseError {
        DseError::parse(&self.origin, line, message)
    }
}

struct Reader<'a> {
    kv: &'a KeyValues,
    used: Vec<&'a str>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, key: &'a str) -> Option<(usize, &'a str)> {
        let (line, v) = self.kv.entries.get(key)?;
        self.used.push(key);
        Some((*line, v.as_str()))
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &'a str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some((line, v)) = self.raw(key) {
            *slot = v
                .parse()
                .map_err(|e| self.kv.err(line, format!("{key}: cannot parse `{v}`: {e}")))?;
        }
        Ok(())
    }

    fn floats(&mut self, key: &'a str, len: usize) -> Result<Option<Vec<f64>>> {
        let Some((line, v)) = self.raw(key) else {
            return Ok(None);
        };
        let vals = parse_floats(v).map_err(|m| self.kv.err(line, format!("{key}: {m}")))?;
        if vals.len() != len {
            return Err(self.kv.err(line, format!("{key}: expected {len} values, found {}", vals.len())));
        }
        Ok(Some(vals))
    }

    fn diag(&mut self, key: &'a str, len: usize, slot: &mut SymMatrix) -> Result<()> {
        if let Some(v) = self.floats(key, len)? {
            *slot = SymMatrix::from_diag(&v);
        }
        Ok(())
    }

    fn mixture(&mut self, key: &'a str) -> Result<Option<GaussianMixture>> {
        let Some((line, v)) = self.raw(key) else {
            return Ok(None);
        };
        parse_mixture(v)
            .map(Some)
            .map_err(|m| self.kv.err(line, format!("{key}: {m}")))
    }
}

fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad number `{}`: {e}", t.trim())))
        .collect()
}

fn parse_mixture(s: &str) -> std::result::Result<GaussianMixture, String> {
    let triples = s
        .split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| match parse_floats(t)?.as_slice() {
            &[w, m, v] => Ok((w, m, v)),
            other => Err(format!("expected weight,mean,variance, found {} values", other.len())),
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    GaussianMixture::from_triples(&triples).map_err(|e| e.to_string())
}

fn parse_events(s: &str) -> std::result::Result<Vec<InputEvent>, String> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let parts: Vec<&str> = t.split(':').map(str::trim).collect();
            let [time, field, value] = parts.as_slice() else {
                return Err(format!("expected time:field:value, found `{}`", t.trim()));
            };
            Ok(InputEvent {
                time: time.parse().map_err(|e| format!("bad event time `{time}`: {e}"))?,
                field: field.parse::<InputField>()?,
                value: value.parse().map_err(|e| format!("bad event value `{value}`: {e}"))?,
            })
        })
        .collect()
}

impl ExperimentConfig {
    /// Overlays the given key/values on the defaults.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut r = Reader { kv, used: Vec::new() };

        let p = &mut cfg.scenario.params;
        if let Some((line, v)) = r.raw("machine.f0") {
            let f0: f64 = v.parse().map_err(|e| kv.err(line, format!("machine.f0: {e}")))?;
            p.omega0 = 2.0 * std::f64::consts::PI * f0;
        }
        r.scalar("machine.omega0", &mut p.omega0)?;
        r.scalar("machine.inertia_j", &mut p.inertia_j)?;
        r.scalar("machine.damping_d", &mut p.damping_d)?;
        r.scalar("machine.xd", &mut p.xd)?;
        r.scalar("machine.xq", &mut p.xq)?;
        r.scalar("machine.xd_p", &mut p.xd_p)?;
        r.scalar("machine.xq_p", &mut p.xq_p)?;
        r.scalar("machine.td0_p", &mut p.td0_p)?;
        r.scalar("machine.tq0_p", &mut p.tq0_p)?;

        let u = &mut cfg.scenario.initial_inputs;
        r.scalar("inputs.tm", &mut u.tm)?;
        r.scalar("inputs.efd", &mut u.efd)?;
        r.scalar("inputs.vt", &mut u.vt)?;

        let s = &mut cfg.scenario;
        r.scalar("scenario.duration", &mut s.duration)?;
        r.scalar("scenario.pmu_rate", &mut s.pmu_rate)?;
        r.scalar("scenario.substeps", &mut s.substeps)?;
        r.scalar("scenario.seed", &mut s.seed)?;
        r.scalar("scenario.allow_any_rate", &mut s.allow_any_rate)?;
        if let Some((line, v)) = r.raw("scenario.events") {
            s.events = parse_events(v).map_err(|m| kv.err(line, format!("scenario.events: {m}")))?;
        }

        if let Some(g) = r.mixture("noise.pt")? {
            cfg.scenario.noise.pt = g;
        }
        if let Some(g) = r.mixture("noise.qt")? {
            cfg.scenario.noise.qt = g;
        }
        if let Some((line, v)) = r.raw("noise.vt") {
            cfg.scenario.noise.vt = match v {
                "none" | "" => None,
                _ => Some(parse_mixture(v).map_err(|m| kv.err(line, format!("noise.vt: {m}")))?),
            };
        }

        r.scalar("ukf.alpha", &mut cfg.ukf.alpha)?;
        r.scalar("ukf.beta", &mut cfg.ukf.beta)?;
        r.scalar("ukf.kappa", &mut cfg.ukf.kappa)?;
        r.diag("ukf.q_diag", 4, &mut cfg.ukf.process_cov)?;
        r.diag("ukf.r_diag", 2, &mut cfg.ukf.meas_cov)?;

        r.scalar("enkf.ensemble_size", &mut cfg.enkf.ensemble_size)?;
        r.scalar("enkf.inflation", &mut cfg.enkf.inflation)?;
        r.scalar("enkf.parallel", &mut cfg.enkf.parallel)?;
        r.diag("enkf.q_diag", 4, &mut cfg.enkf.process_cov)?;
        r.diag("enkf.r_diag", 2, &mut cfg.enkf.meas_cov)?;
        if let Some((line, v)) = r.raw("enkf.seed") {
            cfg.enkf_seed = Some(v.parse().map_err(|e| kv.err(line, format!("enkf.seed: {e}")))?);
        }

        r.scalar("experiment.trials", &mut cfg.trials)?;
        r.scalar("experiment.warmup", &mut cfg.warmup)?;
        if let Some((line, v)) = r.raw("experiment.workers") {
            let w: usize = v.parse().map_err(|e| kv.err(line, format!("experiment.workers: {e}")))?;
            cfg.workers = (w > 0).then_some(w);
        }
        if let Some(v) = r.floats("prior.mean_offset", 4)? {
            cfg.prior_mean_offset.copy_from_slice(&v);
        }
        r.diag("prior.cov_diag", 4, &mut cfg.prior_cov)?;
        if let Some((_, v)) = r.raw("output.dir") {
            cfg.output_dir = PathBuf::from(v);
        }

        for (key, (line, _)) in &kv.entries {
            if !r.used.contains(&key.as_str()) {
                return Err(kv.err(*line, format!("unknown key `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentConfig::from_key_values(&KeyValues::load(path)?)
    }
}
