//! Localization and integrity metrics, threshold sweeps, and the Monte
//! Carlo experiment runner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{JointParticleFilter, JpfConfig, KfRaimConfig, KfRaimFilter};
use crate::filter::{FilterConfig, GmmParticleFilter};
use crate::integrity::{self, IntegrityConfig};
use crate::sim::{self, IntegrityScenarioConfig, Scenario, ScenarioConfig};
use crate::types::StateVector;
use crate::{Error, Result};

/// Which estimator runs a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Proposed,
    KfRaim,
    Jpf,
}

impl FilterKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterKind::Proposed => "proposed",
            FilterKind::KfRaim => "kf-raim",
            FilterKind::Jpf => "j-pf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(FilterKind::Proposed),
            "kf-raim" => Ok(FilterKind::KfRaim),
            "j-pf" => Ok(FilterKind::Jpf),
            other => Err(Error::Config(format!(
                "unknown filter '{other}' (expected proposed | kf-raim | j-pf)"
            ))),
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One epoch of a finished run. `p_mir` and `r_a` are `NaN` for filters
/// that run without the integrity monitor.
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub time: f64,
    pub estimate: StateVector,
    pub truth: StateVector,
    pub p_mir: f64,
    pub r_a: f64,
    pub available: bool,
    pub hazard: bool,
}

/// A full run: per-epoch records aligned with the scenario epochs.
#[derive(Debug, Clone, Default)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
}

impl RunRecord {
    pub fn errors(&self) -> Vec<f64> {
        self.epochs
            .iter()
            .map(|e| e.estimate.horizontal_distance(&e.truth))
            .collect()
    }

    pub fn rmse(&self) -> f64 {
        let errors = self.errors();
        let n = errors.len().max(1) as f64;
        (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt()
    }
}

/// Horizontal root-mean-square error between paired sequences.
pub fn rmse(estimates: &[StateVector], truths: &[StateVector]) -> Result<f64> {
    if estimates.len() != truths.len() || estimates.is_empty() {
        return Err(Error::LengthMismatch {
            context: "rmse",
            left: estimates.len(),
            right: truths.len(),
        });
    }
    let sum_sq: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| e.horizontal_distance(t).powi(2))
        .sum();
    Ok((sum_sq / estimates.len() as f64).sqrt())
}

/// Percentage of estimates whose horizontal error exceeds `limit` meters.
pub fn pct_over(estimates: &[StateVector], truths: &[StateVector], limit: f64) -> Result<f64> {
    if estimates.len() != truths.len() || estimates.is_empty() {
        return Err(Error::LengthMismatch {
            context: "pct_over",
            left: estimates.len(),
            right: truths.len(),
        });
    }
    let over = estimates
        .iter()
        .zip(truths)
        .filter(|(e, t)| e.horizontal_distance(t) > limit)
        .count();
    Ok(100.0 * over as f64 / estimates.len() as f64)
}

/// Estimated probability of false alarm (unavailable while safe) and
/// integrity risk (available while hazardous).
pub fn pfa_pir(avail: &[bool], hazard: &[bool]) -> Result<(f64, f64)> {
    if avail.len() != hazard.len() || avail.is_empty() {
        return Err(Error::LengthMismatch {
            context: "pfa_pir",
            left: avail.len(),
            right: hazard.len(),
        });
    }
    let t = avail.len() as f64;
    let fa = avail
        .iter()
        .zip(hazard)
        .filter(|(a, h)| !**a && !**h)
        .count() as f64;
    let ir = avail
        .iter()
        .zip(hazard)
        .filter(|(a, h)| **a && **h)
        .count() as f64;
    Ok((fa / t, ir / t))
}

/// RMSE of concatenated runs from per-run RMSEs and epoch counts: the
/// epoch-weighted quadratic mean.
pub fn pooled_rmse(per_run: &[(f64, usize)]) -> f64 {
    let total: usize = per_run.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return 0.0;
    }
    let sum_sq: f64 = per_run
        .iter()
        .map(|(rmse, n)| rmse * rmse * *n as f64)
        .sum();
    (sum_sq / total as f64).sqrt()
}

/// One evaluated threshold pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub pmir_threshold: f64,
    pub ra_threshold: f64,
    pub p_fa: f64,
    pub p_ir: f64,
}

/// Threshold sweep output: every grid point plus the Pareto frontier
/// (minimal `(P_FA, P_IR)` pairs, sorted by increasing `P_FA`).
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub frontier: Vec<SweepPoint>,
}

/// Default sweep grids: risk thresholds `{0, 0.01, ..., 1}` and accuracy
/// thresholds `{0, 1, ..., 30}` meters.
pub fn default_sweep_grids() -> (Vec<f64>, Vec<f64>) {
    let pmir = (0..=100).map(|i| i as f64 / 100.0).collect();
    let ra = (0..=30).map(|i| i as f64).collect();
    (pmir, ra)
}

/// Recompute availability for every threshold pair over raw per-epoch
/// monitor statistics `(p_mir, r_a, hazard)` and report the error rates.
pub fn threshold_sweep(
    samples: &[(f64, f64, bool)],
    pmir_grid: &[f64],
    ra_grid: &[f64],
) -> Result<SweepResult> {
    if samples.is_empty() {
        return Err(Error::invalid("threshold sweep", "no samples"));
    }
    let t = samples.len() as f64;
    let mut points = Vec::with_capacity(pmir_grid.len() * ra_grid.len());
    for &p0 in pmir_grid {
        for &r0 in ra_grid {
            let mut fa = 0usize;
            let mut ir = 0usize;
            for &(p_mir, r_a, hazard) in samples {
                let available = p_mir <= p0 && r_a <= r0;
                match (available, hazard) {
                    (false, false) => fa += 1,
                    (true, true) => ir += 1,
                    _ => {}
                }
            }
            points.push(SweepPoint {
                pmir_threshold: p0,
                ra_threshold: r0,
                p_fa: fa as f64 / t,
                p_ir: ir as f64 / t,
            });
        }
    }
    Ok(SweepResult {
        frontier: pareto_frontier(&points),
        points,
    })
}

/// Non-dominated points under joint minimization of `(P_FA, P_IR)`,
/// sorted by increasing `P_FA` (hence non-increasing `P_IR`).
pub fn pareto_frontier(points: &[SweepPoint]) -> Vec<SweepPoint> {
    let mut sorted: Vec<SweepPoint> = points.to_vec();
    sorted.sort_by(|a, b| {
        a.p_fa
            .total_cmp(&b.p_fa)
            .then(a.p_ir.total_cmp(&b.p_ir))
    });
    let mut frontier: Vec<SweepPoint> = Vec::new();
    for p in sorted {
        if frontier
            .last()
            .map(|last| p.p_ir < last.p_ir)
            .unwrap_or(true)
        {
            frontier.push(p);
        }
    }
    frontier
}

/// Smallest integrity risk attainable with `P_FA` at or below a budget;
/// `None` when no point qualifies.
pub fn min_pir_at_pfa(points: &[SweepPoint], pfa_budget: f64) -> Option<f64> {
    points
        .iter()
        .filter(|p| p.p_fa <= pfa_budget)
        .map(|p| p.p_ir)
        .min_by(f64::total_cmp)
}

fn kf_config_from(filter: &FilterConfig) -> KfRaimConfig {
    KfRaimConfig {
        propagation_sigma: filter.propagation_sigma,
        measurement_sigma: filter.measurement_sigma,
        init_sigma: filter.init_sigma,
        ..KfRaimConfig::default()
    }
}

fn jpf_config_from(filter: &FilterConfig, fault_change_prob: f64) -> JpfConfig {
    JpfConfig {
        num_particles: filter.num_particles,
        propagation_sigma: filter.propagation_sigma,
        measurement_sigma: filter.measurement_sigma,
        init_sigma: filter.init_sigma,
        fault_change_prob,
        ..JpfConfig::default()
    }
}

/// RNG stream offsets, clear of the simulator's streams.
const FILTER_STREAM_BASE: u64 = 16;

fn filter_rng(seed: u64, kind: FilterKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = match kind {
        FilterKind::Proposed => 0,
        FilterKind::KfRaim => 1,
        FilterKind::Jpf => 2,
    };
    rng.set_stream(FILTER_STREAM_BASE + offset);
    rng
}

/// Run one filter over a simulated scenario. The proposed filter also
/// runs the integrity monitor each epoch; the baselines report `NaN`
/// monitor statistics and count as always available.
pub fn run_scenario(
    kind: FilterKind,
    scenario: &Scenario,
    filter_config: &FilterConfig,
    integrity_config: &IntegrityConfig,
    run_seed: u64,
) -> Result<RunRecord> {
    let initial = scenario.initial_truth();
    let mut rng = filter_rng(run_seed, kind);
    let mut record = RunRecord::default();
    let fault_change_prob = 0.2;

    match kind {
        FilterKind::Proposed => {
            let mut filter = GmmParticleFilter::new(
                filter_config.clone(),
                &initial.state,
                initial.time,
                &mut rng,
            )?;
            for (epoch, truth) in scenario.epochs.iter().zip(scenario.truth_at_epochs()) {
                let out = filter.step(epoch, &mut rng)?;
                let error = out.estimate.horizontal_distance(&truth.state);
                let measurements = filter_config.effective_pseudoranges(epoch);
                let report = integrity::monitor(
                    &out.gamma,
                    &measurements,
                    &out.propagated,
                    &out.posterior,
                    &out.estimate,
                    integrity_config,
                )?;
                record.epochs.push(EpochRecord {
                    time: epoch.time,
                    estimate: out.estimate,
                    truth: truth.state,
                    p_mir: report.p_mir,
                    r_a: report.r_a,
                    available: report.available,
                    hazard: error > integrity_config.alarm_limit,
                });
            }
        }
        FilterKind::KfRaim => {
            let mut filter =
                KfRaimFilter::new(kf_config_from(filter_config), &initial.state, initial.time);
            for (epoch, truth) in scenario.epochs.iter().zip(scenario.truth_at_epochs()) {
                let out = filter.step(epoch)?;
                let error = out.state.mean.horizontal_distance(&truth.state);
                record.epochs.push(EpochRecord {
                    time: epoch.time,
                    estimate: out.state.mean,
                    truth: truth.state,
                    p_mir: f64::NAN,
                    r_a: f64::NAN,
                    available: true,
                    hazard: error > integrity_config.alarm_limit,
                });
            }
        }
        FilterKind::Jpf => {
            let mut filter = JointParticleFilter::new(
                jpf_config_from(filter_config, fault_change_prob),
                &initial.state,
                initial.time,
                &mut rng,
            )?;
            for (epoch, truth) in scenario.epochs.iter().zip(scenario.truth_at_epochs()) {
                let out = filter.step(epoch, &mut rng)?;
                let error = out.estimate.horizontal_distance(&truth.state);
                record.epochs.push(EpochRecord {
                    time: epoch.time,
                    estimate: out.estimate,
                    truth: truth.state,
                    p_mir: f64::NAN,
                    r_a: f64::NAN,
                    available: true,
                    hazard: error > integrity_config.alarm_limit,
                });
            }
        }
    }
    Ok(record)
}

/// Experiment specification: a scenario template instantiated per seed,
/// the filters to compare, and their shared configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub filters: Vec<FilterKind>,
    pub filter: FilterConfig,
    pub integrity: IntegrityConfig,
    pub seeds: Vec<u64>,
}

/// Aggregated results for one filter.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub filter: FilterKind,
    pub runs: usize,
    pub rmse_mean: f64,
    pub rmse_se: f64,
    pub pct_over_15_mean: f64,
    pub pct_over_15_se: f64,
    pub p_fa_mean: f64,
    pub p_ir_mean: f64,
}

/// One run's scalar results.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub filter: FilterKind,
    pub seed: u64,
    pub rmse: f64,
    pub pct_over_15: f64,
    pub p_fa: f64,
    pub p_ir: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
    pub per_run: Vec<RunSummary>,
    /// Failed runs as `(filter, seed, error)`; they do not enter the
    /// aggregates.
    pub failures: Vec<(FilterKind, u64, String)>,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Run every `(seed, filter)` combination and aggregate. Runs execute in
/// parallel across seeds; aggregation order is fixed by the seed list, so
/// identical configs give identical tables.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentTable> {
    config.scenario.validate()?;
    config.filter.validate()?;
    config.integrity.validate()?;
    if config.seeds.is_empty() || config.filters.is_empty() {
        return Err(Error::Config("experiment needs seeds and filters".into()));
    }

    let runs: Vec<(FilterKind, u64, Result<RunRecord>)> = config
        .seeds
        .par_iter()
        .flat_map_iter(|&seed| {
            let scenario_config = ScenarioConfig {
                rng_seed: seed,
                ..config.scenario.clone()
            };
            let scenario = sim::simulate_scenario(&scenario_config);
            config.filters.iter().map(move |&kind| match &scenario {
                Ok(s) => (
                    kind,
                    seed,
                    run_scenario(kind, s, &config.filter, &config.integrity, seed),
                ),
                Err(e) => (kind, seed, Err(Error::Config(e.to_string()))),
            })
        })
        .collect();

    let mut table = ExperimentTable::default();
    for kind in &config.filters {
        let mut rmses = Vec::new();
        let mut pcts = Vec::new();
        let mut pfas = Vec::new();
        let mut pirs = Vec::new();
        for (k, seed, result) in &runs {
            if k != kind {
                continue;
            }
            match result {
                Ok(record) => {
                    let estimates: Vec<StateVector> =
                        record.epochs.iter().map(|e| e.estimate).collect();
                    let truths: Vec<StateVector> = record.epochs.iter().map(|e| e.truth).collect();
                    let run_rmse = rmse(&estimates, &truths)?;
                    let run_pct = pct_over(&estimates, &truths, 15.0)?;
                    let avail: Vec<bool> = record.epochs.iter().map(|e| e.available).collect();
                    let hazard: Vec<bool> = record.epochs.iter().map(|e| e.hazard).collect();
                    let (p_fa, p_ir) = pfa_pir(&avail, &hazard)?;
                    rmses.push(run_rmse);
                    pcts.push(run_pct);
                    pfas.push(p_fa);
                    pirs.push(p_ir);
                    table.per_run.push(RunSummary {
                        filter: *kind,
                        seed: *seed,
                        rmse: run_rmse,
                        pct_over_15: run_pct,
                        p_fa,
                        p_ir,
                    });
                }
                Err(e) => table.failures.push((*kind, *seed, e.to_string())),
            }
        }
        let (rmse_mean, rmse_se) = mean_and_se(&rmses);
        let (pct_mean, pct_se) = mean_and_se(&pcts);
        let (pfa_mean, _) = mean_and_se(&pfas);
        let (pir_mean, _) = mean_and_se(&pirs);
        table.rows.push(ExperimentRow {
            filter: *kind,
            runs: rmses.len(),
            rmse_mean,
            rmse_se,
            pct_over_15_mean: pct_mean,
            pct_over_15_se: pct_se,
            p_fa_mean: pfa_mean,
            p_ir_mean: pir_mean,
        });
    }
    Ok(table)
}

/// Which risk estimator a sweep evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorKind {
    Gmm,
    Bayesian,
}

impl MonitorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MonitorKind::Gmm => "gmm",
            MonitorKind::Bayesian => "bayesian",
        }
    }
}

/// One epoch evaluated under one alarm limit during the integrity sweep,
/// carrying both monitors' raw statistics.
#[derive(Debug, Clone, Copy)]
pub struct IntegritySample {
    pub num_particles: usize,
    pub alarm_limit: f64,
    pub time: f64,
    pub error: f64,
    pub hazard: bool,
    pub r_a: f64,
    pub p_mir_gmm: f64,
    pub p_mir_bayes: f64,
}

impl IntegritySample {
    pub fn statistic(&self, monitor: MonitorKind) -> f64 {
        match monitor {
            MonitorKind::Gmm => self.p_mir_gmm,
            MonitorKind::Bayesian => self.p_mir_bayes,
        }
    }
}

/// Integrity comparison experiment specification.
#[derive(Debug, Clone)]
pub struct IntegritySweepConfig {
    pub scenario: IntegrityScenarioConfig,
    pub particle_counts: Vec<usize>,
    pub alarm_limits: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Template filter config; particle count is overridden per setting.
    pub filter: FilterConfig,
    /// Quantile parameter for the accuracy radius.
    pub alpha: f64,
    pub cubature_order: usize,
}

impl Default for IntegritySweepConfig {
    fn default() -> Self {
        IntegritySweepConfig {
            scenario: IntegrityScenarioConfig::default(),
            particle_counts: vec![100, 500],
            alarm_limits: vec![10.0, 15.0],
            seeds: (0..13).collect(),
            filter: FilterConfig {
                propagation_sigma: 20.0,
                ..FilterConfig::default()
            },
            alpha: 0.841_345,
            cubature_order: 8,
        }
    }
}

/// Run the proposed filter over the integrity scenario for every particle
/// count and seed, evaluating both risk monitors at every alarm limit.
pub fn run_integrity_sweep(config: &IntegritySweepConfig) -> Result<Vec<IntegritySample>> {
    if config.particle_counts.is_empty() || config.alarm_limits.is_empty() {
        return Err(Error::Config(
            "integrity sweep needs particle counts and alarm limits".into(),
        ));
    }
    let mut jobs = Vec::new();
    for &n in &config.particle_counts {
        for &seed in &config.seeds {
            jobs.push((n, seed));
        }
    }
    let batches: Vec<Result<Vec<IntegritySample>>> = jobs
        .par_iter()
        .map(|&(n, seed)| integrity_run(config, n, seed))
        .collect();
    let mut samples = Vec::new();
    for batch in batches {
        samples.extend(batch?);
    }
    Ok(samples)
}

fn integrity_run(
    config: &IntegritySweepConfig,
    num_particles: usize,
    seed: u64,
) -> Result<Vec<IntegritySample>> {
    let scenario_config = IntegrityScenarioConfig {
        rng_seed: seed,
        ..config.scenario.clone()
    };
    let scenario = sim::simulate_integrity_scenario(&scenario_config)?;
    let filter_config = FilterConfig {
        num_particles,
        ..config.filter.clone()
    };
    let mut rng = filter_rng(seed, FilterKind::Proposed);
    let initial = scenario.initial_truth();
    let mut filter =
        GmmParticleFilter::new(filter_config.clone(), &initial.state, initial.time, &mut rng)?;

    let mut samples = Vec::new();
    for (epoch, truth) in scenario.epochs.iter().zip(scenario.truth_at_epochs()) {
        let out = filter.step(epoch, &mut rng)?;
        let error = out.estimate.horizontal_distance(&truth.state);
        let measurements = filter_config.effective_pseudoranges(epoch);
        let covariance = integrity::weighted_covariance(&out.posterior)?;
        let r_a = integrity::accuracy(&covariance, config.alpha);
        for &al in &config.alarm_limits {
            let monitor_config = IntegrityConfig {
                alarm_limit: al,
                alpha: config.alpha,
                cubature_order: config.cubature_order,
                ..IntegrityConfig::default()
            };
            let risk = integrity::p_mir(
                &out.gamma,
                &measurements,
                &out.propagated,
                &out.estimate,
                &monitor_config,
            )?;
            let bayes = integrity::bayesian_pmir(&out.posterior, &out.estimate, al);
            samples.push(IntegritySample {
                num_particles,
                alarm_limit: al,
                time: epoch.time,
                error,
                hazard: error > al,
                r_a,
                p_mir_gmm: risk.p_mir,
                p_mir_bayes: bayes,
            });
        }
    }
    Ok(samples)
}

/// Sweep thresholds for one monitor over one `(N, AL)` slice of samples.
pub fn sweep_monitor(
    samples: &[IntegritySample],
    monitor: MonitorKind,
    pmir_grid: &[f64],
    ra_grid: &[f64],
) -> Result<SweepResult> {
    let triples: Vec<(f64, f64, bool)> = samples
        .iter()
        .map(|s| (s.statistic(monitor), s.r_a, s.hazard))
        .collect();
    threshold_sweep(&triples, pmir_grid, ra_grid)
}
