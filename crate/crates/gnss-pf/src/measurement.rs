//! Pseudorange geometry, normalized residuals, the squared-Gaussian vote
//! density, and the Gaussian-mixture measurement likelihood.
//!
//! The mixture likelihood sums one Gaussian component per measurement,
//! `L(x) = sum_k gamma_k N(rho_k | rho_hat_k(x), sigma_k^2)`, so a faulty
//! subset of measurements contributes additively instead of multiplying
//! the whole likelihood toward zero.

use nalgebra::Vector3;

use crate::types::{EpochMeasurements, GmmCoefficients, PseudorangeMeasurement, SatelliteState, StateVector};
use crate::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Lower clamp for the squared-residual argument of [`chi2_1_density`].
///
/// The density diverges as `x^(-1/2)` at zero; clamping keeps votes from
/// perfectly fitting particles bounded so pooled mixture weights stay
/// well conditioned.
pub const VOTE_CLAMP: f64 = 1e-3;

/// Expected pseudorange from a state to a satellite: Euclidean range from
/// the receiver position (altitude zero) plus the clock-bias offset when
/// the state carries one.
pub fn expected_pseudorange(state: &StateVector, sat: &SatelliteState) -> Result<f64> {
    let receiver = Vector3::new(state.px, state.py, 0.0);
    let range = (sat.position - receiver).norm();
    if range == 0.0 {
        return Err(Error::ZeroRange);
    }
    Ok(range + state.clock_bias.unwrap_or(0.0))
}

/// Residual of a measurement at a state, in units of its sigma.
pub fn normalized_residual(state: &StateVector, meas: &PseudorangeMeasurement) -> Result<f64> {
    let expected = expected_pseudorange(state, &meas.satellite)?;
    Ok((meas.pseudorange - expected) / meas.sigma)
}

/// Density of the square of a standard Gaussian variable (the chi-squared
/// distribution with one degree of freedom), with the argument clamped
/// below [`VOTE_CLAMP`]:
///
/// `f(x) = x^(-1/2) exp(-x/2) / sqrt(2 pi)` evaluated at `max(x, 1e-3)`.
pub fn chi2_1_density(x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::NegativeDensityArg(x));
    }
    let x = x.max(VOTE_CLAMP);
    Ok((-0.5 * x).exp() / (x.sqrt() * SQRT_2PI))
}

/// Vote cast by a particle for a measurement: the squared-Gaussian density
/// of its squared normalized residual. Even in the residual and strictly
/// decreasing in its magnitude once the square exceeds the clamp.
pub fn vote(residual: f64) -> f64 {
    debug_assert!(residual.is_finite());
    let x = (residual * residual).max(VOTE_CLAMP);
    (-0.5 * x).exp() / (x.sqrt() * SQRT_2PI)
}

/// Gaussian log-density of one measurement's pseudorange at a state.
pub fn component_log_density(state: &StateVector, meas: &PseudorangeMeasurement) -> Result<f64> {
    let r = normalized_residual(state, meas)?;
    Ok(-LN_SQRT_2PI - meas.sigma.ln() - 0.5 * r * r)
}

/// Log of the mixture likelihood `sum_k gamma_k N_k(x)`, computed with
/// log-sum-exp over the per-component log-densities.
pub fn gmm_log_likelihood(
    state: &StateVector,
    pseudoranges: &[PseudorangeMeasurement],
    gamma: &GmmCoefficients,
) -> Result<f64> {
    if pseudoranges.len() != gamma.len() {
        return Err(Error::LengthMismatch {
            context: "mixture likelihood",
            left: pseudoranges.len(),
            right: gamma.len(),
        });
    }
    let mut terms = Vec::with_capacity(pseudoranges.len());
    for (meas, &g) in pseudoranges.iter().zip(gamma.as_slice()) {
        if g == 0.0 {
            terms.push(f64::NEG_INFINITY);
        } else {
            terms.push(g.ln() + component_log_density(state, meas)?);
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok(max + sum.ln())
}

/// A mixture likelihood bound to one epoch's measurements and coefficients.
#[derive(Debug, Clone)]
pub struct GmmLikelihood<'a> {
    pub measurements: &'a EpochMeasurements,
    pub gamma: &'a GmmCoefficients,
}

impl<'a> GmmLikelihood<'a> {
    pub fn new(measurements: &'a EpochMeasurements, gamma: &'a GmmCoefficients) -> Result<Self> {
        if measurements.num_measurements() != gamma.len() {
            return Err(Error::LengthMismatch {
                context: "mixture likelihood",
                left: measurements.num_measurements(),
                right: gamma.len(),
            });
        }
        Ok(GmmLikelihood {
            measurements,
            gamma,
        })
    }

    pub fn log_density(&self, state: &StateVector) -> Result<f64> {
        gmm_log_likelihood(state, &self.measurements.pseudoranges, self.gamma)
    }

    /// Linear-domain density; underflows gracefully to zero far from the
    /// measurement-consistent region.
    pub fn density(&self, state: &StateVector) -> Result<f64> {
        Ok(self.log_density(state)?.exp())
    }
}
