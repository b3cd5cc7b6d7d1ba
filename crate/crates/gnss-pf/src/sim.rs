//! Scenario simulation: trajectories, satellite constellations, odometry,
//! and fault-injected pseudoranges.
//!
//! All randomness flows from a single run seed through named substreams
//! (trajectory, constellation, faults, measurement noise), so a seed fully
//! determines a scenario bit for bit.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::measurement::expected_pseudorange;
use crate::types::{
    gauss, EpochMeasurements, Odometry, PseudorangeMeasurement, SatelliteState, StateVector,
};
use crate::{Error, Result};

/// Satellite orbital height above the horizontal plane, meters.
pub const SATELLITE_HEIGHT: f64 = 2e7;
/// Satellite speed, meters/second.
pub const SATELLITE_SPEED: f64 = 1000.0;

/// Substream identifiers for the per-seed RNGs.
mod stream {
    pub const TRAJECTORY: u64 = 1;
    pub const CONSTELLATION: u64 = 2;
    pub const FAULTS: u64 = 3;
    pub const NOISE: u64 = 4;
}

fn substream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Ground-truth trajectory shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Piecewise-constant heading redrawn uniformly every 20-60 s.
    RandomHeading,
    /// Square loop of 1000 m side starting and ending at the origin.
    Square,
}

/// Simulation parameters for the fault-injection scenarios.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub num_satellites: usize,
    /// Pseudorange noise standard deviation, meters.
    pub gnss_sigma: f64,
    /// Fault bias magnitude range `[lo, hi]`, meters.
    pub bias_range: (f64, f64),
    /// Largest number of simultaneously faulty measurements.
    pub max_faults: usize,
    /// Per-epoch probability that the faulty subset is redrawn.
    pub fault_change_prob: f64,
    /// Vehicle speed, meters/second.
    pub vehicle_speed: f64,
    /// Odometry speed noise standard deviation, meters/second.
    pub odometry_sigma: f64,
    /// Scenario length, seconds.
    pub duration: f64,
    /// Measurement rate, hertz.
    pub rate: f64,
    pub trajectory: TrajectoryKind,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_satellites: 7,
            gnss_sigma: 5.0,
            bias_range: (100.0, 100.0),
            max_faults: 3,
            fault_change_prob: 0.2,
            vehicle_speed: 10.0,
            odometry_sigma: 5.0,
            duration: 400.0,
            rate: 1.0,
            trajectory: TrajectoryKind::RandomHeading,
            rng_seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_satellites == 0 {
            return Err(Error::invalid("scenario", "num_satellites must be >= 1"));
        }
        if self.max_faults >= self.num_satellites {
            return Err(Error::invalid(
                "scenario",
                format!(
                    "max_faults {} must be below num_satellites {}",
                    self.max_faults, self.num_satellites
                ),
            ));
        }
        if self.bias_range.0 > self.bias_range.1 {
            return Err(Error::invalid("scenario", "bias range lo > hi"));
        }
        if !(self.rate > 0.0 && self.duration > 0.0) {
            return Err(Error::invalid("scenario", "rate and duration must be > 0"));
        }
        Ok(())
    }
}

/// One ground-truth sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthPoint {
    pub time: f64,
    pub state: StateVector,
    /// True heading, radians; also the heading assumed known by filters.
    pub heading: f64,
}

/// Piecewise-constant-heading trajectory sampled at the scenario rate,
/// starting at the origin at `t = 0`.
pub fn generate_trajectory(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<TruthPoint> {
    let dt = 1.0 / config.rate;
    let steps = (config.duration * config.rate).round() as usize;
    let mut points = Vec::with_capacity(steps + 1);

    let mut heading;
    let mut dwell_left;
    match config.trajectory {
        TrajectoryKind::RandomHeading => {
            heading = rng.random_range(0.0..2.0 * PI);
            dwell_left = rng.random_range(20.0..=60.0);
        }
        TrajectoryKind::Square => {
            heading = 0.0;
            dwell_left = f64::INFINITY;
        }
    }

    let mut x = 0.0;
    let mut y = 0.0;
    points.push(TruthPoint {
        time: 0.0,
        state: StateVector::new(x, y),
        heading,
    });
    let side_time = 1000.0 / config.vehicle_speed;
    for step in 1..=steps {
        let time = step as f64 * dt;
        if let TrajectoryKind::Square = config.trajectory {
            // Turn left every completed side, wrapping after four sides.
            let side = ((time - dt) / side_time).floor() as usize % 4;
            heading = side as f64 * PI / 2.0;
        } else {
            dwell_left -= dt;
            if dwell_left <= 0.0 {
                heading = rng.random_range(0.0..2.0 * PI);
                dwell_left = rng.random_range(20.0..=60.0);
            }
        }
        x += config.vehicle_speed * dt * heading.cos();
        y += config.vehicle_speed * dt * heading.sin();
        points.push(TruthPoint {
            time,
            state: StateVector::new(x, y),
            heading,
        });
    }
    points
}

/// A constellation frozen at `t = 0`; satellite states at later times come
/// from constant-velocity extrapolation.
#[derive(Debug, Clone)]
pub struct Constellation {
    initial: Vec<SatelliteState>,
}

impl Constellation {
    /// Place satellites at height [`SATELLITE_HEIGHT`] on well-separated
    /// azimuths: one slot of width `2 pi / n` per satellite, jittered
    /// within the slot so neighbors keep at least `pi / n` spacing, the
    /// whole pattern randomly rotated. Horizontal velocity directions are
    /// independent and uniform at [`SATELLITE_SPEED`].
    pub fn generate(num_satellites: usize, rng: &mut ChaCha8Rng) -> Self {
        let n = num_satellites;
        let slot = 2.0 * PI / n as f64;
        let min_spacing = Constellation::min_spacing(n);
        let rotation = rng.random_range(0.0..2.0 * PI);
        let mut initial = Vec::with_capacity(n);
        for j in 0..n {
            let azimuth = rotation + j as f64 * slot + rng.random_range(0.0..=(slot - min_spacing));
            let distance = rng.random_range(0.5e7..=2.0e7);
            let position = Vector3::new(
                distance * azimuth.cos(),
                distance * azimuth.sin(),
                SATELLITE_HEIGHT,
            );
            let course = rng.random_range(0.0..2.0 * PI);
            let velocity = Vector3::new(
                SATELLITE_SPEED * course.cos(),
                SATELLITE_SPEED * course.sin(),
                0.0,
            );
            initial.push(SatelliteState::new(position, velocity));
        }
        Constellation { initial }
    }

    /// Minimum azimuthal spacing guaranteed between any two satellites.
    pub fn min_spacing(num_satellites: usize) -> f64 {
        2.0 * PI / (2.0 * num_satellites as f64)
    }

    pub fn len(&self) -> usize {
        self.initial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initial.is_empty()
    }

    /// Satellite states at time `t`.
    pub fn at(&self, t: f64) -> Vec<SatelliteState> {
        self.initial
            .iter()
            .map(|s| SatelliteState::new(s.position + s.velocity * t, s.velocity))
            .collect()
    }
}

/// Which measurements currently carry a bias, and how much.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FaultState {
    /// Faulty satellite indices, sorted.
    pub faulty: Vec<usize>,
    /// Bias per entry of `faulty`, meters.
    pub biases: Vec<f64>,
}

impl FaultState {
    pub fn none() -> Self {
        FaultState::default()
    }

    pub fn bias_for(&self, sat_index: usize) -> Option<f64> {
        self.faulty
            .iter()
            .position(|&k| k == sat_index)
            .map(|i| self.biases[i])
    }
}

/// With probability `fault_change_prob`, redraw the faulty subset: its
/// size uniform in `{0..=max_faults}`, its members uniform without
/// replacement, and each bias uniform in the configured range. Otherwise
/// return the state unchanged.
pub fn update_fault_state(
    fs: &FaultState,
    config: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
) -> FaultState {
    if rng.random::<f64>() >= config.fault_change_prob {
        return fs.clone();
    }
    draw_fault_state(config, rng)
}

fn draw_fault_state(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> FaultState {
    let size = rng.random_range(0..=config.max_faults);
    let mut indices: Vec<usize> = (0..config.num_satellites).collect();
    let (chosen, _) = indices.partial_shuffle(rng, size);
    let mut faulty = chosen.to_vec();
    faulty.sort_unstable();
    let (lo, hi) = config.bias_range;
    let biases = faulty
        .iter()
        .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo })
        .collect();
    FaultState { faulty, biases }
}

/// Simulate one epoch of pseudoranges and odometry. Faulty measurements
/// get their bias added and doubled noise variance; the recorded sigma is
/// the clean value for every measurement, so files do not leak which
/// measurements are faulty.
pub fn simulate_epoch(
    truth: &TruthPoint,
    sats: &[SatelliteState],
    fs: &FaultState,
    config: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
) -> EpochMeasurements {
    let mut pseudoranges = Vec::with_capacity(sats.len());
    for (k, sat) in sats.iter().enumerate() {
        let range = expected_pseudorange(&truth.state, sat).expect("satellite above plane");
        let bias = fs.bias_for(k).unwrap_or(0.0);
        let sigma_draw = if fs.bias_for(k).is_some() {
            config.gnss_sigma * std::f64::consts::SQRT_2
        } else {
            config.gnss_sigma
        };
        pseudoranges.push(PseudorangeMeasurement {
            pseudorange: range + bias + gauss(rng, sigma_draw),
            satellite: *sat,
            sigma: config.gnss_sigma,
        });
    }
    let odometry = Odometry {
        speed: config.vehicle_speed + gauss(rng, config.odometry_sigma),
        yaw_rate: None,
        heading: Some(truth.heading),
        sigma: config.odometry_sigma,
    };
    EpochMeasurements {
        time: truth.time,
        pseudoranges,
        odometry: Some(odometry),
    }
}

/// One injected-fault row, as written to the fault file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultRecord {
    pub time: f64,
    pub sat_index: usize,
    /// Range delta injected into this measurement, meters.
    pub bias: f64,
}

/// A complete simulated run: ground truth (from `t = 0`), measurement
/// epochs, and the injected faults, emitted together so metrics can label
/// hazard epochs exactly.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub truth: Vec<TruthPoint>,
    pub epochs: Vec<EpochMeasurements>,
    pub faults: Vec<FaultRecord>,
}

impl Scenario {
    /// Ground-truth points aligned with `epochs` (skips `t = 0`).
    pub fn truth_at_epochs(&self) -> &[TruthPoint] {
        &self.truth[1..]
    }

    pub fn initial_truth(&self) -> &TruthPoint {
        &self.truth[0]
    }
}

/// Generate a full fault-injection scenario. The faulty subset starts
/// from a random draw and redraws with the configured change probability
/// at every subsequent epoch.
pub fn simulate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let mut trajectory_rng = substream(config.rng_seed, stream::TRAJECTORY);
    let mut constellation_rng = substream(config.rng_seed, stream::CONSTELLATION);
    let mut fault_rng = substream(config.rng_seed, stream::FAULTS);
    let mut noise_rng = substream(config.rng_seed, stream::NOISE);

    let truth = generate_trajectory(config, &mut trajectory_rng);
    let constellation = Constellation::generate(config.num_satellites, &mut constellation_rng);

    let mut fs = draw_fault_state(config, &mut fault_rng);
    let mut epochs = Vec::with_capacity(truth.len() - 1);
    let mut faults = Vec::new();
    for point in &truth[1..] {
        let sats = constellation.at(point.time);
        epochs.push(simulate_epoch(point, &sats, &fs, config, &mut noise_rng));
        for (i, &k) in fs.faulty.iter().enumerate() {
            faults.push(FaultRecord {
                time: point.time,
                sat_index: k,
                bias: fs.biases[i],
            });
        }
        fs = update_fault_state(&fs, config, &mut fault_rng);
    }
    Ok(Scenario {
        truth,
        epochs,
        faults,
    })
}

/// Parameters for the integrity-monitoring scenario: a fixed window where
/// a subset of measurements is made consistent with an offset position.
#[derive(Debug, Clone)]
pub struct IntegrityScenarioConfig {
    pub num_satellites: usize,
    pub gnss_sigma: f64,
    pub vehicle_speed: f64,
    pub duration: f64,
    pub rate: f64,
    /// Offset magnitude range `[lo, hi]`, meters.
    pub offset_range: (f64, f64),
    /// Fault window `[start, end]`, seconds.
    pub fault_window: (f64, f64),
    /// Largest fraction of measurements faulted at once.
    pub max_fault_fraction: f64,
    /// Redraw the faulty subset every epoch inside the window instead of
    /// holding one subset for the whole window.
    pub resample_subset_each_epoch: bool,
    pub trajectory: TrajectoryKind,
    pub rng_seed: u64,
}

impl Default for IntegrityScenarioConfig {
    fn default() -> Self {
        IntegrityScenarioConfig {
            num_satellites: 10,
            gnss_sigma: 5.0,
            vehicle_speed: 10.0,
            duration: 400.0,
            rate: 1.0,
            offset_range: (50.0, 150.0),
            fault_window: (125.0, 175.0),
            max_fault_fraction: 0.6,
            resample_subset_each_epoch: false,
            trajectory: TrajectoryKind::RandomHeading,
            rng_seed: 0,
        }
    }
}

/// Generate the integrity scenario: clean measurements everywhere except
/// the fault window, where the chosen subset is replaced by ranges from
/// an offset position (random direction, magnitude in `offset_range`).
/// No odometry is emitted.
pub fn simulate_integrity_scenario(config: &IntegrityScenarioConfig) -> Result<Scenario> {
    if config.num_satellites == 0 {
        return Err(Error::invalid("integrity scenario", "num_satellites must be >= 1"));
    }
    if !(0.0..=1.0).contains(&config.max_fault_fraction) {
        return Err(Error::invalid("integrity scenario", "max_fault_fraction outside [0, 1]"));
    }
    let scenario_config = ScenarioConfig {
        num_satellites: config.num_satellites,
        gnss_sigma: config.gnss_sigma,
        vehicle_speed: config.vehicle_speed,
        duration: config.duration,
        rate: config.rate,
        trajectory: config.trajectory,
        rng_seed: config.rng_seed,
        ..ScenarioConfig::default()
    };
    let mut trajectory_rng = substream(config.rng_seed, stream::TRAJECTORY);
    let mut constellation_rng = substream(config.rng_seed, stream::CONSTELLATION);
    let mut fault_rng = substream(config.rng_seed, stream::FAULTS);
    let mut noise_rng = substream(config.rng_seed, stream::NOISE);

    let truth = generate_trajectory(&scenario_config, &mut trajectory_rng);
    let constellation = Constellation::generate(config.num_satellites, &mut constellation_rng);

    let max_faulted = (config.max_fault_fraction * config.num_satellites as f64).floor() as usize;
    let draw_subset = |rng: &mut ChaCha8Rng| -> (Vec<usize>, f64, f64) {
        let size = rng.random_range(1..=max_faulted.max(1));
        let mut indices: Vec<usize> = (0..config.num_satellites).collect();
        let (chosen, _) = indices.partial_shuffle(rng, size);
        let mut subset = chosen.to_vec();
        subset.sort_unstable();
        let (lo, hi) = config.offset_range;
        let magnitude = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let direction = rng.random_range(0.0..2.0 * PI);
        (subset, magnitude, direction)
    };
    let (mut subset, mut magnitude, mut direction) = draw_subset(&mut fault_rng);

    let (window_start, window_end) = config.fault_window;
    let mut epochs = Vec::with_capacity(truth.len() - 1);
    let mut faults = Vec::new();
    for point in &truth[1..] {
        let sats = constellation.at(point.time);
        let in_window = point.time >= window_start && point.time <= window_end;
        if in_window && config.resample_subset_each_epoch {
            (subset, magnitude, direction) = draw_subset(&mut fault_rng);
        }
        let offset_state = StateVector::new(
            point.state.px + magnitude * direction.cos(),
            point.state.py + magnitude * direction.sin(),
        );
        let mut pseudoranges = Vec::with_capacity(sats.len());
        for (k, sat) in sats.iter().enumerate() {
            let clean_range = expected_pseudorange(&point.state, sat).expect("satellite above plane");
            let faulted = in_window && subset.contains(&k);
            let base = if faulted {
                expected_pseudorange(&offset_state, sat).expect("satellite above plane")
            } else {
                clean_range
            };
            if faulted {
                faults.push(FaultRecord {
                    time: point.time,
                    sat_index: k,
                    bias: base - clean_range,
                });
            }
            pseudoranges.push(PseudorangeMeasurement {
                pseudorange: base + gauss(&mut noise_rng, config.gnss_sigma),
                satellite: *sat,
                sigma: config.gnss_sigma,
            });
        }
        epochs.push(EpochMeasurements {
            time: point.time,
            pseudoranges,
            odometry: None,
        });
    }
    Ok(Scenario {
        truth,
        epochs,
        faults,
    })
}
