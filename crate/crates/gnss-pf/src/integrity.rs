//! Integrity monitoring: misleading-information risk from the mixture
//! likelihood integrated over the alarm-limit disk, accuracy from the
//! weighted particle covariance, and the availability decision.
//!
//! Two risk estimators are provided. [`p_mir`] is the mixture-likelihood
//! estimator: it compares the measurement evidence available inside the
//! alarm-limit disk against the total evidence, so disagreement between
//! measurements raises the reported risk even when the particle cloud is
//! confidently wrong. [`bayesian_pmir`] is the classical filter-only
//! baseline that sums posterior particle weight outside the disk.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::measurement::gmm_log_likelihood;
use crate::types::{GmmCoefficients, ParticleSet, PseudorangeMeasurement, StateVector};
use crate::{Error, Result};

/// Monitor thresholds and the cubature resolution.
#[derive(Debug, Clone)]
pub struct IntegrityConfig {
    /// Alarm limit, meters: horizontal error above this is hazardous.
    pub alarm_limit: f64,
    /// Availability threshold on the misleading-information risk.
    pub pmir_threshold: f64,
    /// Availability threshold on the accuracy radius, meters.
    pub accuracy_threshold: f64,
    /// Probability mass the accuracy radius must contain.
    pub alpha: f64,
    /// Nodes per axis of the disk cubature rule (node count = order^2).
    pub cubature_order: usize,
}

impl Default for IntegrityConfig {
    fn default() -> Self {
        IntegrityConfig {
            alarm_limit: 15.0,
            pmir_threshold: 0.1,
            accuracy_threshold: 10.0,
            alpha: 0.5,
            cubature_order: 8,
        }
    }
}

impl IntegrityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alarm_limit > 0.0) {
            return Err(Error::invalid("integrity config", "alarm_limit must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.pmir_threshold) {
            return Err(Error::invalid("integrity config", "pmir_threshold outside [0, 1]"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("integrity config", "alpha outside (0, 1)"));
        }
        if self.cubature_order == 0 {
            return Err(Error::invalid("integrity config", "cubature_order must be >= 1"));
        }
        Ok(())
    }
}

/// Per-epoch monitor output.
#[derive(Debug, Clone, Copy)]
pub struct IntegrityReport {
    pub p_mir: f64,
    /// Accuracy radius, meters. With `alpha <= 0.5` the defining quantile
    /// is nonpositive and the radius degenerates to <= 0; it is reported
    /// as computed.
    pub r_a: f64,
    pub available: bool,
    /// Propagated-prior probability mass inside the alarm-limit disk.
    pub prior_mass_in_disk: f64,
    /// Set when the measurement evidence underflowed to zero and the risk
    /// was pinned to 1.
    pub zero_evidence: bool,
}

/// Weighted sample covariance of the horizontal position:
/// `C = (1 - sum w_i^2)^-1 sum_i w_i (p_i - mean)(p_i - mean)^T`.
pub fn weighted_covariance(particles: &ParticleSet) -> Result<Matrix2<f64>> {
    if particles.len() < 2 {
        return Err(Error::DegenerateCovariance(1.0));
    }
    let sum_sq: f64 = particles.weights().iter().map(|w| w * w).sum();
    if sum_sq >= 1.0 {
        return Err(Error::DegenerateCovariance(sum_sq));
    }
    let mut mx = 0.0;
    let mut my = 0.0;
    for (state, w) in particles.iter() {
        mx += w * state.px;
        my += w * state.py;
    }
    let mut cxx = 0.0;
    let mut cxy = 0.0;
    let mut cyy = 0.0;
    for (state, w) in particles.iter() {
        let dx = state.px - mx;
        let dy = state.py - my;
        cxx += w * dx * dx;
        cxy += w * dx * dy;
        cyy += w * dy * dy;
    }
    let scale = 1.0 / (1.0 - sum_sq);
    Ok(Matrix2::new(cxx, cxy, cxy, cyy) * scale)
}

/// Accuracy radius: the larger per-axis standard deviation scaled by the
/// standard-normal quantile of `alpha`. Nonpositive for `alpha <= 0.5`.
pub fn accuracy(covariance: &Matrix2<f64>, alpha: f64) -> f64 {
    let quantile = StdNormal::standard().inverse_cdf(alpha);
    let sx = covariance[(0, 0)].max(0.0).sqrt();
    let sy = covariance[(1, 1)].max(0.0).sqrt();
    sx.max(sy) * quantile
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton iteration on
/// the Legendre recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = -p / d;
            x += dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 2..=n {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = p_next;
    }
    if n == 1 {
        return (x, 1.0);
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Integrate a scalar field over a disk with a product Gauss rule:
/// Gauss-Chebyshev (second kind) across the diameter and Gauss-Legendre
/// along each chord, `order^2` nodes in total. Exact for polynomials of
/// total degree up to `2 * order - 1`.
pub fn disk_cubature<F>(f: F, center: (f64, f64), radius: f64, order: usize) -> f64
where
    F: Fn(f64, f64) -> f64,
{
    let (t_nodes, t_weights) = gauss_legendre(order);
    let divisor = (order + 1) as f64;
    let mut total = 0.0;
    for j in 1..=order {
        let theta = PI * j as f64 / divisor;
        let x = theta.cos();
        let chord_half = theta.sin();
        let wx = PI / divisor * chord_half * chord_half;
        for (t, wt) in t_nodes.iter().zip(&t_weights) {
            let y = chord_half * t;
            total += wx * wt * f(center.0 + radius * x, center.1 + radius * y);
        }
    }
    total * radius * radius
}

/// Mixture-likelihood risk estimate.
#[derive(Debug, Clone, Copy)]
pub struct PmirEstimate {
    pub p_mir: f64,
    pub prior_mass_in_disk: f64,
    pub zero_evidence: bool,
}

fn gmm_density_at(
    px: f64,
    py: f64,
    template: &StateVector,
    measurements: &[PseudorangeMeasurement],
    gamma: &GmmCoefficients,
) -> f64 {
    let state = StateVector {
        px,
        py,
        ..*template
    };
    gmm_log_likelihood(&state, measurements, gamma).map_or(0.0, f64::exp)
}

/// Misleading-information risk from the mixture likelihood:
///
/// `1 - (prior mass inside the disk / measurement evidence) *
///  mean mixture density over the disk`,
///
/// clamped to `[0, 1]`. The prior mass comes from the propagated
/// distribution, the evidence is the propagated-particle average of the
/// mixture likelihood, and the disk integral is evaluated by
/// [`disk_cubature`] with the in-disk conditional approximated as uniform.
/// Zero evidence pins the risk to 1.
pub fn p_mir(
    gamma: &GmmCoefficients,
    measurements: &[PseudorangeMeasurement],
    propagated: &ParticleSet,
    estimate: &StateVector,
    config: &IntegrityConfig,
) -> Result<PmirEstimate> {
    if gamma.len() != measurements.len() {
        return Err(Error::LengthMismatch {
            context: "misleading-information risk",
            left: gamma.len(),
            right: measurements.len(),
        });
    }
    if measurements.is_empty() {
        return Err(Error::NoMeasurements);
    }
    let al = config.alarm_limit;

    let prior_mass: f64 = propagated
        .iter()
        .filter(|(state, _)| state.horizontal_distance(estimate) <= al)
        .map(|(_, w)| w)
        .sum();

    let mut evidence = 0.0;
    for (state, w) in propagated.iter() {
        evidence += w * gmm_log_likelihood(state, measurements, gamma)?.exp();
    }
    if evidence <= 0.0 || !evidence.is_finite() {
        return Ok(PmirEstimate {
            p_mir: 1.0,
            prior_mass_in_disk: prior_mass,
            zero_evidence: true,
        });
    }

    let integral = disk_cubature(
        |x, y| gmm_density_at(x, y, estimate, measurements, gamma),
        (estimate.px, estimate.py),
        al,
        config.cubature_order,
    );
    let disk_area = PI * al * al;
    let raw = 1.0 - (prior_mass / evidence) * (integral / disk_area);
    Ok(PmirEstimate {
        p_mir: raw.clamp(0.0, 1.0),
        prior_mass_in_disk: prior_mass,
        zero_evidence: false,
    })
}

/// Filter-only risk baseline: posterior probability mass strictly outside
/// the alarm-limit disk around the estimate.
pub fn bayesian_pmir(posterior: &ParticleSet, estimate: &StateVector, alarm_limit: f64) -> f64 {
    posterior
        .iter()
        .filter(|(state, _)| state.horizontal_distance(estimate) > alarm_limit)
        .map(|(_, w)| w)
        .sum()
}

/// Available iff both the risk and the accuracy radius are within their
/// thresholds.
pub fn availability(p_mir: f64, r_a: f64, config: &IntegrityConfig) -> bool {
    p_mir <= config.pmir_threshold && r_a <= config.accuracy_threshold
}

/// Full per-epoch report from the filter outputs.
pub fn monitor(
    gamma: &GmmCoefficients,
    measurements: &[PseudorangeMeasurement],
    propagated: &ParticleSet,
    posterior: &ParticleSet,
    estimate: &StateVector,
    config: &IntegrityConfig,
) -> Result<IntegrityReport> {
    let covariance = weighted_covariance(posterior)?;
    let r_a = accuracy(&covariance, config.alpha);
    let risk = p_mir(gamma, measurements, propagated, estimate, config)?;
    Ok(IntegrityReport {
        p_mir: risk.p_mir,
        r_a,
        available: availability(risk.p_mir, r_a, config),
        prior_mass_in_disk: risk.prior_mass_in_disk,
        zero_evidence: risk.zero_evidence,
    })
}
