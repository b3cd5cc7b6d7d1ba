//! Joint state-space particle filter: each particle carries the vehicle
//! state plus an explicit hypothesis of which measurements are faulty.
//!
//! Fault hypotheses are capped at two simultaneous faults to keep the
//! hypothesis space tractable; it still grows combinatorially with the
//! measurement count, which is the baseline's known limitation. Faulted
//! measurements contribute a flat density instead of the Gaussian so a
//! fault hypothesis neither rewards nor punishes the excluded value.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::filter::{dynamics, mean_estimate, systematic_resample_indices};
use crate::measurement::component_log_density;
use crate::types::{
    gauss, normalize_log_weights, wrap_angle, EpochMeasurements, ParticleSet,
    PseudorangeMeasurement, StateVector,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct JpfConfig {
    pub num_particles: usize,
    /// Propagation noise standard deviation per axis, meters.
    pub propagation_sigma: f64,
    /// Measurement sigma override; `None` uses each epoch's value.
    pub measurement_sigma: Option<f64>,
    pub init_sigma: f64,
    /// Probability that a particle redraws its fault hypothesis each epoch.
    pub fault_change_prob: f64,
    /// Maximum simultaneous faults a hypothesis may carry.
    pub max_faults: usize,
    /// Flat likelihood density assigned to a faulted measurement, 1/m.
    pub faulted_density: f64,
}

impl Default for JpfConfig {
    fn default() -> Self {
        JpfConfig {
            num_particles: 500,
            propagation_sigma: 5.0,
            measurement_sigma: Some(5.0),
            init_sigma: 5.0,
            fault_change_prob: 0.2,
            max_faults: 2,
            faulted_density: 1e-4,
        }
    }
}

impl JpfConfig {
    fn sigma_for(&self, meas: &PseudorangeMeasurement) -> f64 {
        self.measurement_sigma.unwrap_or(meas.sigma)
    }
}

/// Vehicle state plus a fault hypothesis (sorted measurement indices).
#[derive(Debug, Clone)]
pub struct JpfParticle {
    pub state: StateVector,
    pub fault_set: Vec<usize>,
    pub log_weight: f64,
}

/// All fault hypotheses over `k` measurements with at most `max_faults`
/// members: the empty set, singletons, then pairs in lexicographic order.
pub fn enumerate_fault_sets(k: usize, max_faults: usize) -> Vec<Vec<usize>> {
    let mut sets = vec![vec![]];
    if max_faults >= 1 {
        for a in 0..k {
            sets.push(vec![a]);
        }
    }
    if max_faults >= 2 {
        for a in 0..k {
            for b in (a + 1)..k {
                sets.push(vec![a, b]);
            }
        }
    }
    sets
}

/// One epoch's output.
#[derive(Debug, Clone)]
pub struct JpfStepOutput {
    pub estimate: StateVector,
    /// Posterior weight carried by each fault hypothesis cardinality
    /// `[empty, single, pair]`, for diagnostics.
    pub fault_mass: [f64; 3],
}

/// Propagate states, transition fault hypotheses, weight against the
/// epoch, estimate, and resample back to `N` particles.
pub fn jpf_step(
    particles: &mut Vec<JpfParticle>,
    epoch: &EpochMeasurements,
    config: &JpfConfig,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Result<JpfStepOutput> {
    let k_t = epoch.num_measurements();
    if k_t == 0 {
        return Err(Error::NoMeasurements);
    }
    let hypotheses = enumerate_fault_sets(k_t, config.max_faults);

    for p in particles.iter_mut() {
        let mut moved = dynamics(&p.state, epoch.odometry.as_ref(), dt);
        moved.px += gauss(rng, config.propagation_sigma);
        moved.py += gauss(rng, config.propagation_sigma);
        if let Some(theta) = moved.heading {
            moved.heading = Some(wrap_angle(theta + gauss(rng, 0.02)));
        }
        p.state = moved;

        let stale = p.fault_set.iter().any(|&k| k >= k_t);
        if stale || rng.random::<f64>() < config.fault_change_prob {
            let pick = rng.random_range(0..hypotheses.len());
            p.fault_set = hypotheses[pick].clone();
        }

        for (k, meas) in epoch.pseudoranges.iter().enumerate() {
            if p.fault_set.contains(&k) {
                p.log_weight += config.faulted_density.ln();
            } else {
                let mut m = *meas;
                m.sigma = config.sigma_for(meas);
                p.log_weight += component_log_density(&p.state, &m)?;
            }
        }
    }

    let weights = normalize_log_weights(
        &particles.iter().map(|p| p.log_weight).collect::<Vec<_>>(),
    )?;
    let states: Vec<StateVector> = particles.iter().map(|p| p.state).collect();
    let estimate = mean_estimate(&ParticleSet::new(states, weights.clone())?);

    let mut fault_mass = [0.0; 3];
    for (p, w) in particles.iter().zip(&weights) {
        fault_mass[p.fault_set.len().min(2)] += w;
    }

    let n = config.num_particles;
    let u0 = rng.random::<f64>() / n as f64;
    let indices = systematic_resample_indices(&weights, n, u0);
    let uniform_log = -(n as f64).ln();
    *particles = indices
        .iter()
        .map(|&i| JpfParticle {
            state: particles[i].state,
            fault_set: particles[i].fault_set.clone(),
            log_weight: uniform_log,
        })
        .collect();

    Ok(JpfStepOutput {
        estimate,
        fault_mass,
    })
}

/// Stateful wrapper with the conventional epoch-loop interface.
#[derive(Debug, Clone)]
pub struct JointParticleFilter {
    particles: Vec<JpfParticle>,
    config: JpfConfig,
    last_time: f64,
}

impl JointParticleFilter {
    /// Particles start around the initial fix with the no-fault hypothesis.
    pub fn new(
        config: JpfConfig,
        initial: &StateVector,
        start_time: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if config.num_particles == 0 {
            return Err(Error::invalid("jpf config", "num_particles must be >= 1"));
        }
        let uniform_log = -(config.num_particles as f64).ln();
        let particles = (0..config.num_particles)
            .map(|_| {
                let mut s = *initial;
                s.px += gauss(rng, config.init_sigma);
                s.py += gauss(rng, config.init_sigma);
                JpfParticle {
                    state: s,
                    fault_set: vec![],
                    log_weight: uniform_log,
                }
            })
            .collect();
        Ok(JointParticleFilter {
            particles,
            config,
            last_time: start_time,
        })
    }

    pub fn particles(&self) -> &[JpfParticle] {
        &self.particles
    }

    pub fn step(&mut self, epoch: &EpochMeasurements, rng: &mut ChaCha8Rng) -> Result<JpfStepOutput> {
        let dt = epoch.time - self.last_time;
        if dt <= 0.0 {
            return Err(Error::invalid(
                "epoch time",
                format!("not increasing: {} after {}", epoch.time, self.last_time),
            ));
        }
        let out = jpf_step(&mut self.particles, epoch, &self.config, dt, rng)?;
        self.last_time = epoch.time;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::SeedableRng;

    use crate::measurement::expected_pseudorange;
    use crate::types::SatelliteState;

    fn sat(x: f64, y: f64, z: f64) -> SatelliteState {
        SatelliteState::new(Vector3::new(x, y, z), Vector3::zeros())
    }

    fn clean_epoch(truth: &StateVector, time: f64) -> EpochMeasurements {
        let sats = [
            sat(1e7, 0.0, 1.5e7),
            sat(-1e7, 2e6, 1.5e7),
            sat(0.0, 1e7, 1.5e7),
            sat(3e6, -1e7, 1.5e7),
            sat(-5e6, -8e6, 1.5e7),
        ];
        let pseudoranges = sats
            .iter()
            .map(|s| PseudorangeMeasurement {
                pseudorange: expected_pseudorange(truth, s).unwrap(),
                satellite: *s,
                sigma: 5.0,
            })
            .collect();
        EpochMeasurements {
            time,
            pseudoranges,
            odometry: None,
        }
    }

    #[test]
    fn fault_set_count_matches_binomials() {
        // K=5: 1 empty + 5 singletons + 10 pairs.
        assert_eq!(enumerate_fault_sets(5, 2).len(), 16);
        assert_eq!(enumerate_fault_sets(4, 2).len(), 11);
        assert_eq!(enumerate_fault_sets(5, 1).len(), 6);
        assert_eq!(enumerate_fault_sets(5, 0).len(), 1);
        assert!(enumerate_fault_sets(6, 2).iter().all(|s| s.len() <= 2));
    }

    #[test]
    fn no_fault_hypothesis_dominates_on_clean_data() {
        let truth = StateVector::new(0.0, 0.0);
        let config = JpfConfig {
            num_particles: 300,
            ..JpfConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut filter = JointParticleFilter::new(config, &truth, 0.0, &mut rng).unwrap();
        let mut last_mass = [0.0; 3];
        for t in 1..=15 {
            let out = filter.step(&clean_epoch(&truth, t as f64), &mut rng).unwrap();
            last_mass = out.fault_mass;
        }
        assert!(
            last_mass[0] > 0.5,
            "no-fault hypothesis mass {last_mass:?}"
        );
    }

    #[test]
    fn deterministic_under_seed() {
        let truth = StateVector::new(0.0, 0.0);
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let config = JpfConfig {
                num_particles: 100,
                ..JpfConfig::default()
            };
            let mut filter = JointParticleFilter::new(config, &truth, 0.0, &mut rng).unwrap();
            let mut estimates = Vec::new();
            for t in 1..=5 {
                estimates.push(filter.step(&clean_epoch(&truth, t as f64), &mut rng).unwrap().estimate);
            }
            estimates
        };
        let a = run(5);
        let b = run(5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.px.to_bits(), y.px.to_bits());
            assert_eq!(x.py.to_bits(), y.py.to_bits());
        }
    }

    #[test]
    fn tracks_position_on_clean_data() {
        let truth = StateVector::new(0.0, 0.0);
        let config = JpfConfig {
            num_particles: 300,
            ..JpfConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut filter = JointParticleFilter::new(config, &truth, 0.0, &mut rng).unwrap();
        let mut last = truth;
        for t in 1..=20 {
            last = filter.step(&clean_epoch(&truth, t as f64), &mut rng).unwrap().estimate;
        }
        assert!(last.horizontal_distance(&truth) < 5.0);
    }
}
