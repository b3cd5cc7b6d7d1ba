//! Command-line interface: scenario generation, filter runs, and the
//! integrity threshold sweep.
//!
//! Exit codes: 0 on success, 1 on runtime failures, 2 on usage or config
//! errors. `GNSS_PF_SEED` and `GNSS_PF_OUT` override the seed list and
//! output directory of any subcommand (command-line flags still win).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::io::{self, ExperimentSpec};
use crate::metrics::{
    self, default_sweep_grids, ExperimentRow, ExperimentTable, FilterKind, MonitorKind,
    RunSummary,
};
use crate::sim;
use crate::{Error, Result};

pub const ENV_SEED: &str = "GNSS_PF_SEED";
pub const ENV_OUT: &str = "GNSS_PF_OUT";

#[derive(Parser, Debug)]
#[command(
    name = "gnss-pf",
    version,
    about = "Fault-robust GNSS localization and integrity monitoring"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate scenario directories (epochs/truth/odometry/faults files)
    Simulate {
        /// Config file (key = value sections)
        #[arg(long)]
        config: PathBuf,
        /// Seeds: `7`, `1,2,5`, or inclusive range `0..49`
        #[arg(long)]
        seeds: Option<String>,
        /// Output directory; one `seed_<n>` subdirectory per seed
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a filter (plus integrity monitor) over one scenario directory
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Scenario directory produced by `simulate`
        #[arg(long)]
        scenario: PathBuf,
        /// Filter: proposed | kf-raim | j-pf
        #[arg(long)]
        filter: Option<String>,
        /// Filter RNG seed
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the scenario directory)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write plotdata.csv with (t, error, p_mir) columns
        #[arg(long)]
        plotdata: bool,
    },
    /// Sweep availability thresholds for both integrity monitors and
    /// write the Pareto frontiers
    SweepIntegrity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit code for an error, per the documented convention.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn env_seeds() -> Result<Option<Vec<u64>>> {
    match std::env::var(ENV_SEED) {
        Ok(spec) => io::parse_seeds(&spec).map(Some),
        Err(_) => Ok(None),
    }
}

fn resolve_seeds(flag: Option<&str>, fallback: &[u64]) -> Result<Vec<u64>> {
    if let Some(spec) = flag {
        return io::parse_seeds(spec);
    }
    if let Some(seeds) = env_seeds()? {
        return Ok(seeds);
    }
    Ok(fallback.to_vec())
}

fn resolve_out(flag: Option<PathBuf>, spec: &ExperimentSpec, default: &str) -> PathBuf {
    flag.or_else(|| std::env::var(ENV_OUT).ok().map(PathBuf::from))
        .or_else(|| spec.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(default))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, seeds, out } => cmd_simulate(&config, seeds.as_deref(), out),
        Command::Run {
            config,
            scenario,
            filter,
            seed,
            out,
            plotdata,
        } => cmd_run(&config, &scenario, filter.as_deref(), seed, out, plotdata),
        Command::SweepIntegrity { config, seeds, out } => {
            cmd_sweep_integrity(&config, seeds.as_deref(), out)
        }
    }
}

fn cmd_simulate(config_path: &Path, seeds: Option<&str>, out: Option<PathBuf>) -> Result<()> {
    let spec = io::experiment_spec(&io::RawConfig::load(config_path)?)?;
    spec.scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
    let seeds = resolve_seeds(seeds, &spec.seeds)?;
    let out_dir = resolve_out(out, &spec, "scenarios");

    for &seed in &seeds {
        let scenario_config = sim::ScenarioConfig {
            rng_seed: seed,
            ..spec.scenario.clone()
        };
        let scenario = sim::simulate_scenario(&scenario_config)?;
        let dir = out_dir.join(format!("seed_{seed:04}"));
        io::write_scenario(&dir, &scenario)?;
        println!(
            "wrote {} ({} epochs, {} fault rows)",
            dir.display(),
            scenario.epochs.len(),
            scenario.faults.len()
        );
    }
    Ok(())
}

fn cmd_run(
    config_path: &Path,
    scenario_dir: &Path,
    filter: Option<&str>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    plotdata: bool,
) -> Result<()> {
    let spec = io::experiment_spec(&io::RawConfig::load(config_path)?)?;
    let kind = match filter {
        Some(name) => FilterKind::parse(name).map_err(|e| Error::Config(e.to_string()))?,
        None => spec.filter_kind,
    };
    let run_seed = seed
        .or_else(|| {
            std::env::var(ENV_SEED)
                .ok()
                .and_then(|s| s.trim().parse().ok())
        })
        .unwrap_or(spec.filter.rng_seed);

    let scenario = io::load_scenario(scenario_dir)?;
    let record = metrics::run_scenario(kind, &scenario, &spec.filter, &spec.integrity, run_seed)?;

    let out_dir = out
        .or_else(|| std::env::var(ENV_OUT).ok().map(PathBuf::from))
        .unwrap_or_else(|| scenario_dir.to_path_buf());
    std::fs::create_dir_all(&out_dir)?;
    io::write_results_csv(&out_dir.join(io::RESULTS_FILE), &record)?;

    let estimates: Vec<_> = record.epochs.iter().map(|e| e.estimate).collect();
    let truths: Vec<_> = record.epochs.iter().map(|e| e.truth).collect();
    let avail: Vec<bool> = record.epochs.iter().map(|e| e.available).collect();
    let hazard: Vec<bool> = record.epochs.iter().map(|e| e.hazard).collect();
    let rmse = metrics::rmse(&estimates, &truths)?;
    let pct = metrics::pct_over(&estimates, &truths, 15.0)?;
    let (p_fa, p_ir) = metrics::pfa_pir(&avail, &hazard)?;
    let table = ExperimentTable {
        rows: vec![ExperimentRow {
            filter: kind,
            runs: 1,
            rmse_mean: rmse,
            rmse_se: 0.0,
            pct_over_15_mean: pct,
            pct_over_15_se: 0.0,
            p_fa_mean: p_fa,
            p_ir_mean: p_ir,
        }],
        per_run: vec![RunSummary {
            filter: kind,
            seed: run_seed,
            rmse,
            pct_over_15: pct,
            p_fa,
            p_ir,
        }],
        failures: vec![],
    };
    io::write_summary_csv(&out_dir.join(io::SUMMARY_FILE), &table)?;
    if plotdata {
        io::write_plotdata_csv(&out_dir.join(io::PLOTDATA_FILE), &record)?;
    }
    println!(
        "{}: rmse {:.2} m, %>15m {:.1}, P(FA) {:.3}, P(IR) {:.3} -> {}",
        kind,
        rmse,
        pct,
        p_fa,
        p_ir,
        out_dir.display()
    );
    Ok(())
}

fn cmd_sweep_integrity(
    config_path: &Path,
    seeds: Option<&str>,
    out: Option<PathBuf>,
) -> Result<()> {
    let spec = io::experiment_spec(&io::RawConfig::load(config_path)?)?;
    let mut sweep_config = spec.sweep.clone();
    sweep_config.seeds = resolve_seeds(seeds, &sweep_config.seeds)?;
    let out_dir = resolve_out(out, &spec, "sweep");
    std::fs::create_dir_all(&out_dir)?;

    let samples = metrics::run_integrity_sweep(&sweep_config)?;
    let (pmir_grid, ra_grid) = default_sweep_grids();
    let mut frontiers = Vec::new();
    for monitor in [MonitorKind::Gmm, MonitorKind::Bayesian] {
        for &n in &sweep_config.particle_counts {
            for &al in &sweep_config.alarm_limits {
                let slice: Vec<_> = samples
                    .iter()
                    .filter(|s| s.num_particles == n && s.alarm_limit == al)
                    .copied()
                    .collect();
                let sweep = metrics::sweep_monitor(&slice, monitor, &pmir_grid, &ra_grid)?;
                println!(
                    "{} N={} AL={}: {} frontier points over {} samples",
                    monitor.as_str(),
                    n,
                    al,
                    sweep.frontier.len(),
                    slice.len()
                );
                frontiers.push((monitor, n, al, sweep));
            }
        }
    }
    io::write_pareto_csv(&out_dir.join(io::PARETO_FILE), &frontiers)?;
    println!("wrote {}", out_dir.join(io::PARETO_FILE).display());
    Ok(())
}
