//! Scenario files, gate evaluation, run orchestration and sweeps for the
//! `viscostar` binary.

pub mod config;
pub mod execute;

pub use config::{ConfigError, Gate, Scenario, SweepParam};
pub use execute::{execute, sweep, Status, VerdictFile};
