//! Fault-robust GNSS localization and integrity monitoring.
//!
//! This crate implements a particle filter for vehicle localization from
//! GNSS pseudorange and odometry measurements that stays accurate when
//! several pseudoranges carry multipath/NLOS bias faults. Instead of a
//! single Gaussian measurement model, the filter uses a Gaussian-mixture
//! likelihood with one component per measurement and estimates the mixture
//! weights jointly with the particle weights through an
//! expectation-maximization loop (measurement voting, vote pooling, mixture
//! weighting). The tracked distribution and the mixture likelihood then
//! feed an integrity monitor that reports misleading-information risk,
//! accuracy, and availability.
//!
//! The crate also ships two comparison baselines (a residual-test Kalman
//! filter and a joint state-space particle filter with explicit fault
//! indicators), a scenario simulator with fault injection, a metrics
//! harness for Monte Carlo experiments, and CSV-backed scenario/result
//! files driven by the `gnss-pf` command-line tool.
//!
//! Start with the runnable programs under `examples/`; each one exercises
//! a single capability end to end.

pub mod baselines;
pub mod cli;
mod error;
pub mod filter;
pub mod integrity;
pub mod io;
pub mod measurement;
pub mod metrics;
pub mod sim;
pub mod types;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
