//! Kalman filter with residual-test fault exclusion.
//!
//! Each epoch the filter predicts through the odometry dynamics, solves a
//! weighted least-squares fix from the surviving measurements, and applies
//! the classical residual tests: a global chi-squared test on the sum of
//! squared normalized residuals, then a local test that removes the worst
//! measurement while the global test keeps failing. The survivors feed a
//! sequential scalar EKF update.

use nalgebra::{Matrix2, Vector2};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal as StdNormal};

use crate::filter::dynamics;
use crate::measurement::expected_pseudorange;
use crate::types::{EpochMeasurements, Odometry, PseudorangeMeasurement, StateVector};
use crate::{Error, Result};

/// Horizontal position is the only estimated state.
const STATE_DIM: usize = 2;

#[derive(Debug, Clone)]
pub struct KfRaimConfig {
    /// Process noise standard deviation per axis, meters per step.
    pub propagation_sigma: f64,
    /// Measurement sigma override; `None` uses each epoch's value.
    pub measurement_sigma: Option<f64>,
    /// Initial position standard deviation, meters.
    pub init_sigma: f64,
    /// False-alarm rate of the global chi-squared test.
    pub p_fa_global: f64,
    /// False-alarm rate of the two-sided local test.
    pub p_fa_local: f64,
}

impl Default for KfRaimConfig {
    fn default() -> Self {
        KfRaimConfig {
            propagation_sigma: 5.0,
            measurement_sigma: Some(5.0),
            init_sigma: 5.0,
            p_fa_global: 0.05,
            p_fa_local: 0.01,
        }
    }
}

impl KfRaimConfig {
    fn sigma_for(&self, meas: &PseudorangeMeasurement) -> f64 {
        self.measurement_sigma.unwrap_or(meas.sigma)
    }
}

/// Gaussian state estimate.
#[derive(Debug, Clone, Copy)]
pub struct KfState {
    pub mean: StateVector,
    pub covariance: Matrix2<f64>,
}

/// Predict step: mean through the dynamics, covariance inflated by the
/// process noise `Q = sigma_f^2 I` (the dynamics Jacobian is identity for
/// the position-only state with exogenous odometry).
pub fn kf_predict(kf: &KfState, odometry: Option<&Odometry>, dt: f64, sigma_f: f64) -> KfState {
    let mean = dynamics(&kf.mean, odometry, dt);
    let covariance = kf.covariance + Matrix2::identity() * sigma_f * sigma_f;
    KfState { mean, covariance }
}

/// Global test: passes iff the sum of squared normalized residuals stays
/// below the chi-squared quantile with `len - state_dim` degrees of
/// freedom at level `1 - p_fa_global`.
pub fn raim_global_test(residuals: &[f64], state_dim: usize, p_fa_global: f64) -> Result<bool> {
    if residuals.len() <= state_dim {
        return Err(Error::InsufficientRedundancy {
            measurements: residuals.len(),
            state_dim,
        });
    }
    let dof = (residuals.len() - state_dim) as f64;
    let threshold = ChiSquared::new(dof)
        .expect("positive dof")
        .inverse_cdf(1.0 - p_fa_global);
    let statistic: f64 = residuals.iter().map(|r| r * r).sum();
    Ok(statistic <= threshold)
}

/// Local test: index of the largest-magnitude residual (ties break toward
/// the lowest index) and whether it exceeds the two-sided Gaussian
/// threshold at level `p_fa_local`.
pub fn raim_local_test(residuals: &[f64], p_fa_local: f64) -> (usize, bool) {
    let mut worst = 0;
    for (i, r) in residuals.iter().enumerate() {
        if r.abs() > residuals[worst].abs() {
            worst = i;
        }
    }
    let threshold = StdNormal::standard().inverse_cdf(1.0 - p_fa_local / 2.0);
    (worst, residuals[worst].abs() > threshold)
}

/// Weighted Gauss-Newton position fix from a subset of measurements.
fn least_squares_fix(
    initial: &StateVector,
    epoch: &EpochMeasurements,
    survivors: &[usize],
    config: &KfRaimConfig,
) -> Result<StateVector> {
    let mut state = *initial;
    for _ in 0..10 {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for &k in survivors {
            let meas = &epoch.pseudoranges[k];
            let sigma = config.sigma_for(meas);
            let expected = expected_pseudorange(&state, &meas.satellite)?;
            let dx = state.px - meas.satellite.position.x;
            let dy = state.py - meas.satellite.position.y;
            let range = expected - state.clock_bias.unwrap_or(0.0);
            let h = Vector2::new(dx / range, dy / range);
            let w = 1.0 / (sigma * sigma);
            jtj += h * h.transpose() * w;
            jtr += h * (meas.pseudorange - expected) * w;
        }
        let Some(inv) = jtj.try_inverse() else {
            break;
        };
        let delta = inv * jtr;
        state.px += delta.x;
        state.py += delta.y;
        if delta.norm() < 1e-9 {
            break;
        }
    }
    Ok(state)
}

fn normalized_residuals_at(
    state: &StateVector,
    epoch: &EpochMeasurements,
    survivors: &[usize],
    config: &KfRaimConfig,
) -> Result<Vec<f64>> {
    survivors
        .iter()
        .map(|&k| {
            let meas = &epoch.pseudoranges[k];
            let expected = expected_pseudorange(state, &meas.satellite)?;
            Ok((meas.pseudorange - expected) / config.sigma_for(meas))
        })
        .collect()
}

/// One epoch's result.
#[derive(Debug, Clone)]
pub struct KfRaimStepOutput {
    pub state: KfState,
    /// Original indices of the measurements excluded by the local test.
    pub excluded: Vec<usize>,
    /// Set when no measurement survived and the epoch was prediction only.
    pub prediction_only: bool,
    /// Whether the final survivor set passed the global test (or had no
    /// redundancy to test).
    pub global_test_passed: bool,
}

/// Predict, iterate the global/local residual tests, and update with the
/// surviving measurements through sequential scalar EKF updates.
pub fn kf_raim_step(
    kf: &KfState,
    epoch: &EpochMeasurements,
    dt: f64,
    config: &KfRaimConfig,
) -> Result<KfRaimStepOutput> {
    let predicted = kf_predict(kf, epoch.odometry.as_ref(), dt, config.propagation_sigma);
    let k_t = epoch.num_measurements();
    if k_t == 0 {
        return Ok(KfRaimStepOutput {
            state: predicted,
            excluded: vec![],
            prediction_only: true,
            global_test_passed: false,
        });
    }

    let mut survivors: Vec<usize> = (0..k_t).collect();
    let mut excluded = Vec::new();
    let mut global_test_passed = true;
    while survivors.len() > STATE_DIM {
        let fix = least_squares_fix(&predicted.mean, epoch, &survivors, config)?;
        let residuals = normalized_residuals_at(&fix, epoch, &survivors, config)?;
        if raim_global_test(&residuals, STATE_DIM, config.p_fa_global)? {
            global_test_passed = true;
            break;
        }
        global_test_passed = false;
        let (local_idx, exceeds) = raim_local_test(&residuals, config.p_fa_local);
        if !exceeds || survivors.len() <= STATE_DIM + 1 {
            break;
        }
        excluded.push(survivors.remove(local_idx));
    }

    // Sequential scalar updates keep the 2x2 algebra well conditioned.
    let mut mean = predicted.mean;
    let mut cov = predicted.covariance;
    for &k in &survivors {
        let meas = &epoch.pseudoranges[k];
        let sigma = config.sigma_for(meas);
        let expected = expected_pseudorange(&mean, &meas.satellite)?;
        let dx = mean.px - meas.satellite.position.x;
        let dy = mean.py - meas.satellite.position.y;
        let range = expected - mean.clock_bias.unwrap_or(0.0);
        let h = Vector2::new(dx / range, dy / range);
        let innovation = meas.pseudorange - expected;
        let s = (h.transpose() * cov * h)[(0, 0)] + sigma * sigma;
        let gain = cov * h / s;
        mean.px += gain.x * innovation;
        mean.py += gain.y * innovation;
        cov = (Matrix2::identity() - gain * h.transpose()) * cov;
        cov = (cov + cov.transpose()) * 0.5;
    }

    Ok(KfRaimStepOutput {
        state: KfState {
            mean,
            covariance: cov,
        },
        excluded,
        prediction_only: false,
        global_test_passed,
    })
}

/// Stateful wrapper tracking the estimate across epochs.
#[derive(Debug, Clone)]
pub struct KfRaimFilter {
    state: KfState,
    config: KfRaimConfig,
    last_time: f64,
}

impl KfRaimFilter {
    pub fn new(config: KfRaimConfig, initial: &StateVector, start_time: f64) -> Self {
        let covariance = Matrix2::identity() * config.init_sigma * config.init_sigma;
        KfRaimFilter {
            state: KfState {
                mean: *initial,
                covariance,
            },
            config,
            last_time: start_time,
        }
    }

    pub fn state(&self) -> &KfState {
        &self.state
    }

    pub fn step(&mut self, epoch: &EpochMeasurements) -> Result<KfRaimStepOutput> {
        let dt = epoch.time - self.last_time;
        if dt <= 0.0 {
            return Err(Error::invalid(
                "epoch time",
                format!("not increasing: {} after {}", epoch.time, self.last_time),
            ));
        }
        let out = kf_raim_step(&self.state, epoch, dt, &self.config)?;
        self.state = out.state;
        self.last_time = epoch.time;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    use crate::types::SatelliteState;

    fn sat(x: f64, y: f64, z: f64) -> SatelliteState {
        SatelliteState::new(Vector3::new(x, y, z), Vector3::zeros())
    }

    fn scene_epoch(truth: &StateVector, bias_on: Option<(usize, f64)>) -> EpochMeasurements {
        let sats = [
            sat(1e7, 0.0, 1.5e7),
            sat(-1e7, 2e6, 1.5e7),
            sat(0.0, 1e7, 1.5e7),
            sat(3e6, -1e7, 1.5e7),
            sat(-5e6, -8e6, 1.5e7),
        ];
        let pseudoranges = sats
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let mut rho = expected_pseudorange(truth, s).unwrap();
                if let Some((fk, bias)) = bias_on {
                    if fk == k {
                        rho += bias;
                    }
                }
                PseudorangeMeasurement {
                    pseudorange: rho,
                    satellite: *s,
                    sigma: 5.0,
                }
            })
            .collect();
        EpochMeasurements {
            time: 1.0,
            pseudoranges,
            odometry: None,
        }
    }

    #[test]
    fn predict_moves_mean_and_grows_covariance() {
        let kf = KfState {
            mean: StateVector::new(0.0, 0.0),
            covariance: Matrix2::identity() * 4.0,
        };
        let odo = Odometry {
            speed: 10.0,
            yaw_rate: None,
            heading: Some(0.0),
            sigma: 0.0,
        };
        let out = kf_predict(&kf, Some(&odo), 1.0, 0.0);
        assert_relative_eq!(out.mean.px, 10.0, epsilon = 1e-12);
        assert_relative_eq!(out.mean.py, 0.0, epsilon = 1e-12);
        assert_relative_eq!(out.covariance[(0, 0)], 4.0, epsilon = 1e-12);

        let grown = kf_predict(&kf, None, 1.0, 3.0);
        assert_relative_eq!(grown.covariance[(0, 0)], 13.0, epsilon = 1e-12);
        assert_relative_eq!(grown.covariance[(1, 1)], 13.0, epsilon = 1e-12);
    }

    #[test]
    fn global_test_cases() {
        assert!(raim_global_test(&[0.0; 5], 2, 0.05).unwrap());
        // One 10-sigma residual among five, dof 3: 100 > 7.81.
        assert!(!raim_global_test(&[10.0, 0.0, 0.0, 0.0, 0.0], 2, 0.05).unwrap());
        assert!(matches!(
            raim_global_test(&[0.0, 0.0], 2, 0.05),
            Err(Error::InsufficientRedundancy { .. })
        ));
    }

    #[test]
    fn chi_squared_threshold_monotone_in_dof() {
        let q = |dof: f64| ChiSquared::new(dof).unwrap().inverse_cdf(0.95);
        assert!(q(1.0) < q(2.0));
        assert!(q(2.0) < q(5.0));
        assert!(q(5.0) < q(10.0));
        assert_relative_eq!(q(3.0), 7.8147, epsilon = 1e-3);
    }

    #[test]
    fn local_test_picks_worst() {
        let (idx, exceeds) = raim_local_test(&[0.1, -3.5, 0.2], 0.01);
        assert_eq!(idx, 1);
        assert!(exceeds);

        let (_, exceeds) = raim_local_test(&[0.3, -0.5, 1.0], 0.01);
        assert!(!exceeds);

        // Tie on magnitude keeps the lowest index.
        let (idx, _) = raim_local_test(&[3.0, -3.0], 0.01);
        assert_eq!(idx, 0);
    }

    #[test]
    fn step_clean_epoch_excludes_nothing() {
        let truth = StateVector::new(0.0, 0.0);
        let kf = KfState {
            mean: truth,
            covariance: Matrix2::identity() * 25.0,
        };
        let out = kf_raim_step(&kf, &scene_epoch(&truth, None), 1.0, &KfRaimConfig::default())
            .unwrap();
        assert!(out.excluded.is_empty());
        assert!(out.global_test_passed);
        assert!(out.state.mean.horizontal_distance(&truth) < 1.0);
    }

    #[test]
    fn step_excludes_biased_measurement() {
        let truth = StateVector::new(0.0, 0.0);
        let kf = KfState {
            mean: truth,
            covariance: Matrix2::identity() * 25.0,
        };
        let epoch = scene_epoch(&truth, Some((2, 100.0)));
        let out = kf_raim_step(&kf, &epoch, 1.0, &KfRaimConfig::default()).unwrap();
        assert_eq!(out.excluded, vec![2]);
        assert!(out.state.mean.horizontal_distance(&truth) < 3.0);
    }

    #[test]
    fn step_is_deterministic() {
        let truth = StateVector::new(0.0, 0.0);
        let kf = KfState {
            mean: StateVector::new(2.0, -1.0),
            covariance: Matrix2::identity() * 25.0,
        };
        let epoch = scene_epoch(&truth, Some((0, 100.0)));
        let a = kf_raim_step(&kf, &epoch, 1.0, &KfRaimConfig::default()).unwrap();
        let b = kf_raim_step(&kf, &epoch, 1.0, &KfRaimConfig::default()).unwrap();
        assert_eq!(a.state.mean.px.to_bits(), b.state.mean.px.to_bits());
        assert_eq!(a.excluded, b.excluded);
    }

    #[test]
    fn covariance_stays_symmetric_psd_across_steps() {
        let truth = StateVector::new(0.0, 0.0);
        let mut filter = KfRaimFilter::new(KfRaimConfig::default(), &truth, 0.0);
        for t in 1..=40 {
            let mut epoch = scene_epoch(&truth, Some((t % 5, 80.0)));
            epoch.time = t as f64;
            filter.step(&epoch).unwrap();
            let c = filter.state().covariance;
            assert_relative_eq!(c[(0, 1)], c[(1, 0)], epsilon = 1e-12);
            let eigen = c.symmetric_eigenvalues();
            assert!(eigen.min() >= -1e-9, "min eigenvalue {}", eigen.min());
        }
    }
}
