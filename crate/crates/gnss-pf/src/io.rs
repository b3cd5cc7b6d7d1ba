//! Scenario, result, and replay files, plus the `key = value` config
//! format.
//!
//! All CSV files are header-first, comma-separated, UTF-8 with LF line
//! endings. Floats are serialized with 17 significant digits so a
//! simulate/load/re-serialize round trip is byte-identical.
//!
//! Schemas:
//!
//! ```text
//! epochs.csv:   t,sat_id,sat_x,sat_y,sat_z,sat_vx,sat_vy,sat_vz,rho,sigma
//! truth.csv:    t,px,py,heading
//! odometry.csv: t,speed,yaw_rate
//! faults.csv:   t,sat_id,bias
//! results.csv:  t,est_px,est_py,err,p_mir,r_a,available,hazard
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::filter::FilterConfig;
use crate::integrity::IntegrityConfig;
use crate::metrics::{
    ExperimentTable, FilterKind, IntegritySweepConfig, MonitorKind, RunRecord, SweepResult,
};
use crate::sim::{
    FaultRecord, IntegrityScenarioConfig, Scenario, ScenarioConfig, TrajectoryKind, TruthPoint,
};
use crate::types::{
    EpochMeasurements, Odometry, PseudorangeMeasurement, SatelliteState, StateVector,
};
use crate::{Error, Result};

pub const EPOCHS_FILE: &str = "epochs.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const ODOMETRY_FILE: &str = "odometry.csv";
pub const FAULTS_FILE: &str = "faults.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PLOTDATA_FILE: &str = "plotdata.csv";
pub const PARETO_FILE: &str = "pareto.csv";

const EPOCHS_HEADER: &str = "t,sat_id,sat_x,sat_y,sat_z,sat_vx,sat_vy,sat_vz,rho,sigma";
const TRUTH_HEADER: &str = "t,px,py,heading";
const ODOMETRY_HEADER: &str = "t,speed,yaw_rate";
const FAULTS_HEADER: &str = "t,sat_id,bias";
const RESULTS_HEADER: &str = "t,est_px,est_py,err,p_mir,r_a,available,hazard";

/// 17-significant-digit float formatting used by every CSV writer.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

struct CsvRows {
    path: PathBuf,
    rows: Vec<(usize, Vec<String>)>,
}

/// Read a CSV file, check its exact header, and split rows into fields.
fn read_csv(path: &Path, header: &str) -> Result<CsvRows> {
    let text = fs::read_to_string(path)?;
    let expected_fields = header.split(',').count();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == header => {}
        Some((_, first)) => {
            return Err(parse_err(
                path,
                1,
                format!("expected header '{header}', found '{first}'"),
            ));
        }
        None => return Err(parse_err(path, 1, "empty file")),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_owned).collect();
        if fields.len() != expected_fields {
            return Err(parse_err(
                path,
                idx + 1,
                format!("expected {expected_fields} fields, found {}", fields.len()),
            ));
        }
        rows.push((idx + 1, fields));
    }
    Ok(CsvRows {
        path: path.to_path_buf(),
        rows,
    })
}

impl CsvRows {
    fn f64_at(&self, row: &(usize, Vec<String>), col: usize, name: &str) -> Result<f64> {
        row.1[col]
            .parse::<f64>()
            .map_err(|_| parse_err(&self.path, row.0, format!("bad {name}: '{}'", row.1[col])))
    }

    fn usize_at(&self, row: &(usize, Vec<String>), col: usize, name: &str) -> Result<usize> {
        row.1[col]
            .parse::<usize>()
            .map_err(|_| parse_err(&self.path, row.0, format!("bad {name}: '{}'", row.1[col])))
    }
}

/// Write a scenario directory: epochs, truth, faults, and odometry when
/// the scenario carries any.
pub fn write_scenario(dir: &Path, scenario: &Scenario) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut epochs = String::from(EPOCHS_HEADER);
    epochs.push('\n');
    for epoch in &scenario.epochs {
        for (sat_id, m) in epoch.pseudoranges.iter().enumerate() {
            let s = &m.satellite;
            writeln!(
                epochs,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_f64(epoch.time),
                sat_id,
                fmt_f64(s.position.x),
                fmt_f64(s.position.y),
                fmt_f64(s.position.z),
                fmt_f64(s.velocity.x),
                fmt_f64(s.velocity.y),
                fmt_f64(s.velocity.z),
                fmt_f64(m.pseudorange),
                fmt_f64(m.sigma),
            )
            .expect("write to string");
        }
    }
    fs::write(dir.join(EPOCHS_FILE), epochs)?;

    let mut truth = String::from(TRUTH_HEADER);
    truth.push('\n');
    for point in &scenario.truth {
        writeln!(
            truth,
            "{},{},{},{}",
            fmt_f64(point.time),
            fmt_f64(point.state.px),
            fmt_f64(point.state.py),
            fmt_f64(point.heading),
        )
        .expect("write to string");
    }
    fs::write(dir.join(TRUTH_FILE), truth)?;

    let mut faults = String::from(FAULTS_HEADER);
    faults.push('\n');
    for f in &scenario.faults {
        writeln!(
            faults,
            "{},{},{}",
            fmt_f64(f.time),
            f.sat_index,
            fmt_f64(f.bias),
        )
        .expect("write to string");
    }
    fs::write(dir.join(FAULTS_FILE), faults)?;

    if scenario.epochs.iter().any(|e| e.odometry.is_some()) {
        let mut odo = String::from(ODOMETRY_HEADER);
        odo.push('\n');
        for epoch in &scenario.epochs {
            if let Some(o) = &epoch.odometry {
                writeln!(
                    odo,
                    "{},{},{}",
                    fmt_f64(epoch.time),
                    fmt_f64(o.speed),
                    fmt_f64(o.yaw_rate.unwrap_or(f64::NAN)),
                )
                .expect("write to string");
            }
        }
        fs::write(dir.join(ODOMETRY_FILE), odo)?;
    }
    Ok(())
}

/// Load a scenario directory written by [`write_scenario`]. Simulation
/// odometry gets its known heading re-attached from the truth file; the
/// odometry noise sigma is not persisted and loads as zero.
pub fn load_scenario(dir: &Path) -> Result<Scenario> {
    let truth = load_truth_csv(&dir.join(TRUTH_FILE))?;
    let epochs_csv = read_csv(&dir.join(EPOCHS_FILE), EPOCHS_HEADER)?;

    let mut epochs: Vec<EpochMeasurements> = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    for row in &epochs_csv.rows {
        let t = epochs_csv.f64_at(row, 0, "t")?;
        let sat_id = epochs_csv.usize_at(row, 1, "sat_id")?;
        let satellite = SatelliteState::new(
            Vector3::new(
                epochs_csv.f64_at(row, 2, "sat_x")?,
                epochs_csv.f64_at(row, 3, "sat_y")?,
                epochs_csv.f64_at(row, 4, "sat_z")?,
            ),
            Vector3::new(
                epochs_csv.f64_at(row, 5, "sat_vx")?,
                epochs_csv.f64_at(row, 6, "sat_vy")?,
                epochs_csv.f64_at(row, 7, "sat_vz")?,
            ),
        );
        let meas = PseudorangeMeasurement {
            pseudorange: epochs_csv.f64_at(row, 8, "rho")?,
            satellite,
            sigma: epochs_csv.f64_at(row, 9, "sigma")?,
        };
        if t > last_time {
            epochs.push(EpochMeasurements {
                time: t,
                pseudoranges: vec![],
                odometry: None,
            });
            last_time = t;
        } else if t < last_time {
            return Err(parse_err(
                &epochs_csv.path,
                row.0,
                format!("non-monotone timestamp {t} after {last_time}"),
            ));
        }
        let epoch = epochs.last_mut().expect("epoch exists");
        if epoch.pseudoranges.len() != sat_id {
            return Err(parse_err(
                &epochs_csv.path,
                row.0,
                format!("sat_id {sat_id} out of order"),
            ));
        }
        epoch.pseudoranges.push(meas);
    }

    if truth.len() != epochs.len() + 1 {
        return Err(Error::LengthMismatch {
            context: "truth vs epochs",
            left: truth.len(),
            right: epochs.len() + 1,
        });
    }

    let odometry_path = dir.join(ODOMETRY_FILE);
    if odometry_path.exists() {
        let odo_csv = read_csv(&odometry_path, ODOMETRY_HEADER)?;
        if odo_csv.rows.len() != epochs.len() {
            return Err(Error::LengthMismatch {
                context: "odometry vs epochs",
                left: odo_csv.rows.len(),
                right: epochs.len(),
            });
        }
        for ((row, epoch), point) in odo_csv.rows.iter().zip(&mut epochs).zip(&truth[1..]) {
            let t = odo_csv.f64_at(row, 0, "t")?;
            if t != epoch.time {
                return Err(parse_err(
                    &odo_csv.path,
                    row.0,
                    format!("odometry time {t} does not match epoch {}", epoch.time),
                ));
            }
            let yaw_rate = odo_csv.f64_at(row, 1 + 1, "yaw_rate")?;
            epoch.odometry = Some(Odometry {
                speed: odo_csv.f64_at(row, 1, "speed")?,
                yaw_rate: (!yaw_rate.is_nan()).then_some(yaw_rate),
                heading: Some(point.heading),
                sigma: 0.0,
            });
        }
    }

    let faults_path = dir.join(FAULTS_FILE);
    let mut faults = Vec::new();
    if faults_path.exists() {
        let faults_csv = read_csv(&faults_path, FAULTS_HEADER)?;
        for row in &faults_csv.rows {
            faults.push(FaultRecord {
                time: faults_csv.f64_at(row, 0, "t")?,
                sat_index: faults_csv.usize_at(row, 1, "sat_id")?,
                bias: faults_csv.f64_at(row, 2, "bias")?,
            });
        }
    }

    Ok(Scenario {
        truth,
        epochs,
        faults,
    })
}

fn load_truth_csv(path: &Path) -> Result<Vec<TruthPoint>> {
    let csv = read_csv(path, TRUTH_HEADER)?;
    let mut truth = Vec::with_capacity(csv.rows.len());
    let mut last_time = f64::NEG_INFINITY;
    for row in &csv.rows {
        let t = csv.f64_at(row, 0, "t")?;
        if t <= last_time {
            return Err(parse_err(
                &csv.path,
                row.0,
                format!("non-monotone timestamp {t}"),
            ));
        }
        last_time = t;
        truth.push(TruthPoint {
            time: t,
            state: StateVector::new(csv.f64_at(row, 1, "px")?, csv.f64_at(row, 2, "py")?),
            heading: csv.f64_at(row, 3, "heading")?,
        });
    }
    if truth.is_empty() {
        return Err(parse_err(path, 1, "truth file has no rows"));
    }
    Ok(truth)
}

/// Per-epoch results of one run.
pub fn write_results_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for e in &record.epochs {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(e.time),
            fmt_f64(e.estimate.px),
            fmt_f64(e.estimate.py),
            fmt_f64(e.estimate.horizontal_distance(&e.truth)),
            fmt_f64(e.p_mir),
            fmt_f64(e.r_a),
            e.available as u8,
            e.hazard as u8,
        )
        .expect("write to string");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Aggregated metrics, one row per filter.
pub fn write_summary_csv(path: &Path, table: &ExperimentTable) -> Result<()> {
    let mut out = String::from(
        "filter,runs,rmse_mean,rmse_se,pct_over_15_mean,pct_over_15_se,p_fa_mean,p_ir_mean",
    );
    out.push('\n');
    for row in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.filter,
            row.runs,
            fmt_f64(row.rmse_mean),
            fmt_f64(row.rmse_se),
            fmt_f64(row.pct_over_15_mean),
            fmt_f64(row.pct_over_15_se),
            fmt_f64(row.p_fa_mean),
            fmt_f64(row.p_ir_mean),
        )
        .expect("write to string");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Per-epoch `(t, error, p_mir)` columns for external plotting.
pub fn write_plotdata_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let mut out = String::from("t,err,p_mir");
    out.push('\n');
    for e in &record.epochs {
        writeln!(
            out,
            "{},{},{}",
            fmt_f64(e.time),
            fmt_f64(e.estimate.horizontal_distance(&e.truth)),
            fmt_f64(e.p_mir),
        )
        .expect("write to string");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Pareto frontiers for every `(monitor, particle count, alarm limit)`
/// combination, rows sorted by increasing false-alarm probability.
pub fn write_pareto_csv(
    path: &Path,
    frontiers: &[(MonitorKind, usize, f64, SweepResult)],
) -> Result<()> {
    let mut out =
        String::from("monitor,num_particles,alarm_limit,pmir_threshold,ra_threshold,p_fa,p_ir");
    out.push('\n');
    for (monitor, n, al, sweep) in frontiers {
        for p in &sweep.frontier {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                monitor.as_str(),
                n,
                fmt_f64(*al),
                fmt_f64(p.pmir_threshold),
                fmt_f64(p.ra_threshold),
                fmt_f64(p.p_fa),
                fmt_f64(p.p_ir),
            )
            .expect("write to string");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Replay ingestion: merge pseudorange and odometry files by timestamp
/// and, when `remove_initial_residuals` is set, subtract each satellite's
/// first-epoch residual (computed at the initial truth position) from all
/// of its measurements.
pub fn load_replay_csv(
    epochs_path: &Path,
    odometry_path: Option<&Path>,
    truth_path: &Path,
    remove_initial_residuals: bool,
) -> Result<(Vec<EpochMeasurements>, Vec<TruthPoint>)> {
    let truth = load_truth_csv(truth_path)?;
    let csv = read_csv(epochs_path, EPOCHS_HEADER)?;

    struct RawRow {
        sat_id: usize,
        meas: PseudorangeMeasurement,
    }
    let mut epochs: Vec<(f64, Vec<RawRow>)> = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    for row in &csv.rows {
        let t = csv.f64_at(row, 0, "t")?;
        if t > last_time {
            epochs.push((t, vec![]));
            last_time = t;
        } else if t < last_time {
            return Err(parse_err(
                &csv.path,
                row.0,
                format!("non-monotone timestamp {t} after {last_time}"),
            ));
        }
        let satellite = SatelliteState::new(
            Vector3::new(
                csv.f64_at(row, 2, "sat_x")?,
                csv.f64_at(row, 3, "sat_y")?,
                csv.f64_at(row, 4, "sat_z")?,
            ),
            Vector3::new(
                csv.f64_at(row, 5, "sat_vx")?,
                csv.f64_at(row, 6, "sat_vy")?,
                csv.f64_at(row, 7, "sat_vz")?,
            ),
        );
        epochs.last_mut().expect("epoch exists").1.push(RawRow {
            sat_id: csv.usize_at(row, 1, "sat_id")?,
            meas: PseudorangeMeasurement {
                pseudorange: csv.f64_at(row, 8, "rho")?,
                satellite,
                sigma: csv.f64_at(row, 9, "sigma")?,
            },
        });
    }
    if epochs.is_empty() {
        return Err(parse_err(epochs_path, 1, "no measurement rows"));
    }

    // Per-satellite correction from the first epoch's residuals at the
    // initial truth position.
    let mut corrections: BTreeMap<usize, f64> = BTreeMap::new();
    if remove_initial_residuals {
        let initial = &truth[0];
        for row in &epochs[0].1 {
            let expected =
                crate::measurement::expected_pseudorange(&initial.state, &row.meas.satellite)?;
            corrections.insert(row.sat_id, row.meas.pseudorange - expected);
        }
    }

    let mut odometry: Vec<(f64, f64, f64)> = Vec::new();
    if let Some(odo_path) = odometry_path {
        let odo_csv = read_csv(odo_path, ODOMETRY_HEADER)?;
        let mut last = f64::NEG_INFINITY;
        for row in &odo_csv.rows {
            let t = odo_csv.f64_at(row, 0, "t")?;
            if t <= last {
                return Err(parse_err(
                    &odo_csv.path,
                    row.0,
                    format!("non-monotone timestamp {t}"),
                ));
            }
            last = t;
            odometry.push((
                t,
                odo_csv.f64_at(row, 1, "speed")?,
                odo_csv.f64_at(row, 2, "yaw_rate")?,
            ));
        }
    }

    let merged = epochs
        .into_iter()
        .map(|(t, rows)| {
            let pseudoranges = rows
                .into_iter()
                .map(|row| {
                    let mut meas = row.meas;
                    if let Some(c) = corrections.get(&row.sat_id) {
                        meas.pseudorange -= c;
                    }
                    meas
                })
                .collect();
            // Most recent odometry at or before the epoch.
            let odo = odometry
                .iter()
                .take_while(|(ot, _, _)| *ot <= t)
                .last()
                .map(|&(_, speed, yaw_rate)| Odometry {
                    speed,
                    yaw_rate: (!yaw_rate.is_nan()).then_some(yaw_rate),
                    heading: None,
                    sigma: 0.0,
                });
            EpochMeasurements {
                time: t,
                pseudoranges,
                odometry: odo,
            }
        })
        .collect();
    Ok((merged, truth))
}

// ---------------------------------------------------------------------------
// Config files: `key = value` lines under `[section]` headers.
// ---------------------------------------------------------------------------

/// Parsed config file: section -> key -> value, all strings.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = name.trim().to_owned();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{origin}:{}: expected 'key = value', found '{line}'",
                    idx + 1
                )));
            };
            sections
                .entry(current.clone())
                .or_default()
                .insert(key.trim().to_owned(), value.trim().to_owned());
        }
        Ok(RawConfig { sections })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        RawConfig::parse(&text, &path.display().to_string())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(String::as_str)
    }

    fn parse_value<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("[{section}] {key}: cannot parse '{raw}'"))
            }),
        }
    }

    pub fn f64(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        Ok(self.parse_value(section, key)?.unwrap_or(default))
    }

    pub fn usize(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        Ok(self.parse_value(section, key)?.unwrap_or(default))
    }

    pub fn u64(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        Ok(self.parse_value(section, key)?.unwrap_or(default))
    }

    pub fn bool(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(raw) => Err(Error::Config(format!(
                "[{section}] {key}: expected boolean, found '{raw}'"
            ))),
        }
    }
}

/// Seed list syntax: `7`, `1,2,5`, or inclusive range `0..49`.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad seed range '{spec}'")))?;
        let hi: u64 = hi
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad seed range '{spec}'")))?;
        if hi < lo {
            return Err(Error::Config(format!("empty seed range '{spec}'")));
        }
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed '{s}'")))
        })
        .collect()
}

/// Everything a config file can specify, with defaults for missing keys.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    pub integrity_scenario: IntegrityScenarioConfig,
    pub filter_kind: FilterKind,
    pub filter: FilterConfig,
    pub integrity: IntegrityConfig,
    pub sweep: IntegritySweepConfig,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
}

/// Build the structured experiment spec from a parsed config file.
pub fn experiment_spec(config: &RawConfig) -> Result<ExperimentSpec> {
    let sc = ScenarioConfig::default();
    let scenario = ScenarioConfig {
        num_satellites: config.usize("scenario", "num_satellites", sc.num_satellites)?,
        gnss_sigma: config.f64("scenario", "gnss_sigma", sc.gnss_sigma)?,
        bias_range: (
            config.f64("scenario", "bias_lo", sc.bias_range.0)?,
            config.f64("scenario", "bias_hi", sc.bias_range.1)?,
        ),
        max_faults: config.usize("scenario", "max_faults", sc.max_faults)?,
        fault_change_prob: config.f64("scenario", "fault_change_prob", sc.fault_change_prob)?,
        vehicle_speed: config.f64("scenario", "vehicle_speed", sc.vehicle_speed)?,
        odometry_sigma: config.f64("scenario", "odometry_sigma", sc.odometry_sigma)?,
        duration: config.f64("scenario", "duration", sc.duration)?,
        rate: config.f64("scenario", "rate", sc.rate)?,
        trajectory: match config.get("scenario", "trajectory").unwrap_or("random") {
            "random" => TrajectoryKind::RandomHeading,
            "square" => TrajectoryKind::Square,
            other => {
                return Err(Error::Config(format!(
                    "[scenario] trajectory: expected random | square, found '{other}'"
                )))
            }
        },
        rng_seed: config.u64("scenario", "rng_seed", 0)?,
    };

    let fc = FilterConfig::default();
    let filter = FilterConfig {
        num_particles: config.usize("filter", "num_particles", fc.num_particles)?,
        propagation_sigma: config.f64("filter", "propagation_sigma", fc.propagation_sigma)?,
        measurement_sigma: Some(config.f64(
            "filter",
            "measurement_sigma",
            fc.measurement_sigma.unwrap_or(5.0),
        )?),
        init_sigma: config.f64("filter", "init_sigma", fc.init_sigma)?,
        em_iterations: config.usize("filter", "em_iterations", fc.em_iterations)?,
        include_prior_in_weighting: config.bool(
            "filter",
            "include_prior",
            fc.include_prior_in_weighting,
        )?,
        heading_sigma: config.f64("filter", "heading_sigma", fc.heading_sigma)?,
        clock_sigma: config.f64("filter", "clock_sigma", fc.clock_sigma)?,
        rng_seed: config.u64("filter", "rng_seed", fc.rng_seed)?,
    };
    let filter_kind = FilterKind::parse(config.get("filter", "kind").unwrap_or("proposed"))?;

    let ic = IntegrityConfig::default();
    let integrity = IntegrityConfig {
        alarm_limit: config.f64("integrity", "alarm_limit", ic.alarm_limit)?,
        pmir_threshold: config.f64("integrity", "pmir_threshold", ic.pmir_threshold)?,
        accuracy_threshold: config.f64("integrity", "accuracy_threshold", ic.accuracy_threshold)?,
        alpha: config.f64("integrity", "alpha", ic.alpha)?,
        cubature_order: config.usize("integrity", "cubature_order", ic.cubature_order)?,
    };

    let isc = IntegrityScenarioConfig::default();
    let integrity_scenario = IntegrityScenarioConfig {
        num_satellites: config.usize("integrity_scenario", "num_satellites", isc.num_satellites)?,
        gnss_sigma: config.f64("integrity_scenario", "gnss_sigma", isc.gnss_sigma)?,
        vehicle_speed: config.f64("integrity_scenario", "vehicle_speed", isc.vehicle_speed)?,
        duration: config.f64("integrity_scenario", "duration", isc.duration)?,
        rate: config.f64("integrity_scenario", "rate", isc.rate)?,
        offset_range: (
            config.f64("integrity_scenario", "offset_lo", isc.offset_range.0)?,
            config.f64("integrity_scenario", "offset_hi", isc.offset_range.1)?,
        ),
        fault_window: (
            config.f64("integrity_scenario", "window_start", isc.fault_window.0)?,
            config.f64("integrity_scenario", "window_end", isc.fault_window.1)?,
        ),
        max_fault_fraction: config.f64(
            "integrity_scenario",
            "max_fault_fraction",
            isc.max_fault_fraction,
        )?,
        resample_subset_each_epoch: config.bool(
            "integrity_scenario",
            "resample_subset_each_epoch",
            isc.resample_subset_each_epoch,
        )?,
        trajectory: TrajectoryKind::RandomHeading,
        rng_seed: 0,
    };

    let seeds = match config.get("run", "seeds") {
        Some(spec) => parse_seeds(spec)?,
        None => vec![0],
    };
    let out_dir = config.get("run", "out_dir").map(PathBuf::from);

    let swc = IntegritySweepConfig::default();
    let parse_list_f64 = |raw: Option<&str>, default: &[f64]| -> Result<Vec<f64>> {
        match raw {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad list entry '{v}'")))
                })
                .collect(),
        }
    };
    let parse_list_usize = |raw: Option<&str>, default: &[usize]| -> Result<Vec<usize>> {
        match raw {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad list entry '{v}'")))
                })
                .collect(),
        }
    };
    let sweep = IntegritySweepConfig {
        scenario: integrity_scenario.clone(),
        particle_counts: parse_list_usize(
            config.get("sweep", "particle_counts"),
            &swc.particle_counts,
        )?,
        alarm_limits: parse_list_f64(config.get("sweep", "alarm_limits"), &swc.alarm_limits)?,
        seeds: match config.get("sweep", "seeds") {
            Some(spec) => parse_seeds(spec)?,
            None => swc.seeds,
        },
        filter: FilterConfig {
            propagation_sigma: config.f64("sweep", "propagation_sigma", 20.0)?,
            ..filter.clone()
        },
        alpha: config.f64("sweep", "alpha", swc.alpha)?,
        cubature_order: integrity.cubature_order,
    };

    Ok(ExperimentSpec {
        scenario,
        integrity_scenario,
        filter_kind,
        filter,
        integrity,
        sweep,
        seeds,
        out_dir,
    })
}
