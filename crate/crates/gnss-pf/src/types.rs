//! Shared data model: vehicle state, particles, measurements, and the
//! weight bookkeeping used by every other module.
//!
//! Weights live in the log domain inside the filter; they are converted to
//! the linear domain only for resampling and reporting, through
//! [`normalize_log_weights`]. Every linear weight vector in the crate is a
//! simplex (nonnegative, sums to one within `SIMPLEX_TOL`).

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};

use crate::{Error, Result};

/// Tolerance on `sum(weights) == 1` for stored weight vectors.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Wrap an angle to `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = (theta + PI).rem_euclid(two_pi);
    if a < 0.0 {
        a += two_pi;
    }
    a - PI
}

/// Vehicle state: 2D position in meters, plus heading and receiver
/// clock-bias offset when running on replay data.
///
/// Simulation mode tracks only `(px, py)`; the optional fields stay `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    /// East position, meters.
    pub px: f64,
    /// North position, meters.
    pub py: f64,
    /// Heading, radians in `[-pi, pi)`; replay mode only.
    pub heading: Option<f64>,
    /// Receiver clock-bias offset, meters; replay mode only.
    pub clock_bias: Option<f64>,
}

impl StateVector {
    /// 2D state used in simulation mode.
    pub fn new(px: f64, py: f64) -> Self {
        StateVector {
            px,
            py,
            heading: None,
            clock_bias: None,
        }
    }

    /// Full replay-mode state. Heading is wrapped to `[-pi, pi)`.
    pub fn with_heading_clock(px: f64, py: f64, heading: f64, clock_bias: f64) -> Self {
        StateVector {
            px,
            py,
            heading: Some(wrap_angle(heading)),
            clock_bias: Some(clock_bias),
        }
    }

    /// Horizontal position as a vector.
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.px, self.py)
    }

    /// Horizontal Euclidean distance to another state.
    pub fn horizontal_distance(&self, other: &StateVector) -> f64 {
        (self.position() - other.position()).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.px.is_finite()
            && self.py.is_finite()
            && self.heading.is_none_or(f64::is_finite)
            && self.clock_bias.is_none_or(f64::is_finite)
    }
}

/// Satellite position and velocity. Local-frame coordinates in simulation,
/// ECEF-like coordinates in replay mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteState {
    /// Position, meters.
    pub position: Vector3<f64>,
    /// Velocity, meters/second.
    pub velocity: Vector3<f64>,
}

impl SatelliteState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        SatelliteState { position, velocity }
    }
}

/// One pseudorange with the satellite that produced it and the standard
/// deviation assumed for its noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudorangeMeasurement {
    /// Measured pseudorange, meters; positive.
    pub pseudorange: f64,
    pub satellite: SatelliteState,
    /// Measurement noise standard deviation, meters; positive.
    pub sigma: f64,
}

/// Odometry for one epoch.
///
/// `heading` is the externally known heading used by the simulation-mode
/// dynamics (the 2D state does not carry one); replay mode integrates
/// `yaw_rate` instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Odometry {
    /// Measured speed, meters/second.
    pub speed: f64,
    /// Yaw rate, radians/second; replay mode.
    pub yaw_rate: Option<f64>,
    /// Known heading, radians; simulation mode.
    pub heading: Option<f64>,
    /// Speed noise standard deviation, meters/second.
    pub sigma: f64,
}

/// All measurements acquired at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMeasurements {
    /// Epoch time, seconds; strictly increasing across a run.
    pub time: f64,
    pub pseudoranges: Vec<PseudorangeMeasurement>,
    /// Absent when the scenario provides no odometry.
    pub odometry: Option<Odometry>,
}

impl EpochMeasurements {
    /// Number of pseudorange measurements in this epoch.
    pub fn num_measurements(&self) -> usize {
        self.pseudoranges.len()
    }
}

/// A weighted set of state hypotheses.
///
/// Construction checks the invariants: equal lengths, at least one
/// particle, and weights forming a simplex within [`SIMPLEX_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    particles: Vec<StateVector>,
    weights: Vec<f64>,
}

impl ParticleSet {
    pub fn new(particles: Vec<StateVector>, weights: Vec<f64>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::invalid("particle set", "empty"));
        }
        if particles.len() != weights.len() {
            return Err(Error::LengthMismatch {
                context: "particle set",
                left: particles.len(),
                right: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights", "negative or non-finite entry"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid("weights", format!("sum {sum} != 1")));
        }
        Ok(ParticleSet { particles, weights })
    }

    /// Equal-weight set over the given states.
    pub fn uniform(particles: Vec<StateVector>) -> Result<Self> {
        let n = particles.len();
        let w = vec![1.0 / n as f64; n.max(1)];
        ParticleSet::new(particles, w)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[StateVector] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateVector, f64)> {
        self.particles.iter().zip(self.weights.iter().copied())
    }
}

/// A propagated particle bound to one measurement for the duration of an
/// update: the state copy, the index of the associated measurement, and
/// the particle's log-weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedParticle {
    pub state: StateVector,
    /// 0-based index of the associated measurement in the epoch.
    pub meas_index: usize,
    /// Natural-log weight.
    pub log_weight: f64,
}

/// Mixture weights over the epoch's measurements: one coefficient per
/// measurement, forming a simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmCoefficients {
    gamma: Vec<f64>,
}

impl GmmCoefficients {
    pub fn new(gamma: Vec<f64>) -> Result<Self> {
        if gamma.is_empty() {
            return Err(Error::invalid("mixture coefficients", "empty"));
        }
        if gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::invalid(
                "mixture coefficients",
                "negative or non-finite entry",
            ));
        }
        let sum: f64 = gamma.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(
                "mixture coefficients",
                format!("sum {sum} != 1"),
            ));
        }
        Ok(GmmCoefficients { gamma })
    }

    /// Uniform coefficients over `k` measurements. `k = 0` yields an empty
    /// vector, used only by prediction-only epochs.
    pub fn uniform(k: usize) -> Self {
        let gamma = if k == 0 {
            Vec::new()
        } else {
            vec![1.0 / k as f64; k]
        };
        GmmCoefficients { gamma }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gamma
    }

    pub fn get(&self, k: usize) -> f64 {
        self.gamma[k]
    }
}

/// Convert log-weights to normalized linear weights by subtracting the
/// maximum before exponentiation, so widely negative inputs do not
/// underflow to an all-zero vector.
///
/// Entries may be `-inf` (zero weight) but not all of them.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.is_empty() {
        return Err(Error::invalid("log-weights", "empty"));
    }
    if log_weights.iter().any(|lw| lw.is_nan() || *lw == f64::INFINITY) {
        return Err(Error::invalid("log-weights", "NaN or +inf entry"));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    let mut w: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= sum;
    }
    Ok(w)
}

/// Effective sample size `1 / sum(w_i^2)` of a normalized weight vector;
/// ranges from 1 (one dominant particle) to N (uniform).
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    1.0 / sum_sq
}

/// Zero-mean Gaussian draw that tolerates `sigma == 0`.
pub(crate) fn gauss(rng: &mut impl rand::Rng, sigma: f64) -> f64 {
    use rand_distr::Distribution;
    if sigma > 0.0 {
        rand_distr::Normal::new(0.0, sigma)
            .expect("valid sigma")
            .sample(rng)
    } else {
        0.0
    }
}
