use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dse_core::config::KeyValues;
use dse_core::harness::{
    emit_report, read_estimates, read_truth_states, run_experiment, run_filter, write_estimates, write_truth,
    ExperimentConfig, FilterKind, FilterSetup,
};
use dse_core::plot::emit_plots;
use dse_core::scenario::{corrupt, read_records, simulate_truth, write_records};
use dse_core::{DseError, Result};

/// Overrides the output directory when `--out` is not given.
const OUT_DIR_ENV: &str = "DSE_OUT_DIR";

#[derive(Parser)]
#[command(name = "dse", version, about = "Generator dynamic state estimation with UKF and EnKF")]
struct Cli {
    /// Override the scenario seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the truth trajectory and a corrupted PMU record stream.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one filter over a PMU record file.
    Estimate {
        #[arg(long)]
        filter: FilterKind,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the seeded multi-trial UKF vs EnKF comparison.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot estimate files against a truth file.
    Plot {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long = "est", required = true, num_args = 1..)]
        estimates: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_key_values(&KeyValues::load(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    Ok(cfg)
}

fn output_dir(flag: Option<PathBuf>, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| DseError::io(&dir, e))?;
    Ok(dir)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let dir = output_dir(out, Some(&cfg))?;
            let truth = simulate_truth(&cfg.scenario)?;
            let (mut noise_rng, _) = cfg.trial_streams(0);
            let records = corrupt(&truth, &cfg.scenario.noise, &mut noise_rng);
            write_truth(&truth, &dir.join("truth.csv"))?;
            write_records(&records, &dir.join("records.csv"))?;
            println!("wrote {} records to {}", records.len(), dir.display());
        }
        Command::Estimate {
            filter,
            records,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let dir = output_dir(out, Some(&cfg))?;
            let recs = read_records(&records)?;
            let truth0 = cfg.scenario.initial_state()?;
            let schedule = cfg.scenario.schedule();
            let (_, enkf_rng) = cfg.trial_streams(0);
            let setup = FilterSetup {
                params: &cfg.scenario.params,
                schedule: &schedule,
                substeps: cfg.scenario.substeps,
                ukf: &cfg.ukf,
                enkf: &cfg.enkf,
                enkf_rng,
            };
            let run = run_filter(&recs, filter, &setup, &cfg.prior(&truth0))?;
            let times: Vec<f64> = recs.iter().map(|r| r.t).collect();
            let path = dir.join(format!("estimates_{}.csv", filter.name()));
            write_estimates(&times, &run.beliefs, &path)?;
            let mut ms: Vec<f64> = run.step_seconds.iter().map(|s| s * 1e3).collect();
            let mean = if ms.is_empty() { 0.0 } else { ms.iter().sum::<f64>() / ms.len() as f64 };
            let p95 = dse_core::harness::percentile(&mut ms, 0.95);
            println!("{filter}: {} steps, mean {mean:.3} ms, p95 {p95:.3} ms -> {}", recs.len(), path.display());
        }
        Command::Compare { config, out } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let dir = output_dir(out, Some(&cfg))?;
            let outcome = run_experiment(&cfg)?;
            emit_report(&outcome.report, &dir)?;
            write_truth(&outcome.truth, &dir.join("truth.csv"))?;
            let first = &outcome.trials[0];
            write_records(&first.records, &dir.join("records.csv"))?;
            let mut labelled = Vec::new();
            for run in &first.runs {
                write_estimates(
                    &outcome.truth.times,
                    &run.beliefs,
                    &dir.join(format!("estimates_{}.csv", run.kind.name())),
                )?;
                labelled.push((run.kind.name().to_string(), run.beliefs.iter().map(belief_array).collect()));
            }
            let truth: Vec<[f64; 4]> = outcome.truth.states.iter().map(|s| s.to_array()).collect();
            emit_plots(&outcome.truth.times, &truth, &labelled, &dir)?;

            println!("median MSE over {} trials (seed {})", outcome.report.trials, outcome.report.seed);
            println!("{:<6} {:>12} {:>12} {:>12} {:>12} {:>9} {:>9}", "filter", "delta", "domega", "eq_p", "ed_p", "mean_ms", "p95_ms");
            for f in &outcome.report.filters {
                println!(
                    "{:<6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>9.3} {:>9.3}",
                    f.kind.name(),
                    f.median_mse[0],
                    f.median_mse[1],
                    f.median_mse[2],
                    f.median_mse[3],
                    f.mean_ms,
                    f.p95_ms
                );
            }
            println!(
                "covariance audit: {} checked, {} asymmetric, min eigenvalue {:e}",
                outcome.audit.checked, outcome.audit.asymmetric, outcome.audit.min_eigenvalue
            );
        }
        Command::Plot { truth, estimates, out } => {
            let dir = output_dir(out, None)?;
            let (times, states) = read_truth_states(&truth)?;
            let mut labelled = Vec::new();
            for path in &estimates {
                let (_, est) = read_estimates(path)?;
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().trim_start_matches("estimates_").to_string())
                    .unwrap_or_else(|| "estimate".into());
                labelled.push((label, est));
            }
            let files = emit_plots(&times, &states, &labelled, &dir)?;
            println!("wrote {} plots to {}", files.len(), dir.display());
        }
    }
    Ok(())
}

fn belief_array(b: &dse_core::ukf::BeliefState) -> [f64; 4] {
    [b.mean[0], b.mean[1], b.mean[2], b.mean[3]]
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Display already folds in the wrapped cause.
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
