//! Comparison baselines: a Kalman filter with residual-test fault
//! exclusion and a joint state-space particle filter carrying explicit
//! per-measurement fault indicators.

pub mod jpf;
pub mod kf_raim;

pub use jpf::{JointParticleFilter, JpfConfig, JpfParticle};
pub use kf_raim::{KfRaimConfig, KfRaimFilter, KfState};
