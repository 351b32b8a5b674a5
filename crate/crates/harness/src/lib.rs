//! Experiment runner: configuration, sweeps and persisted run directories.

pub mod config;
pub mod run;
pub mod sweep;

pub use config::{ConfigError, Experiment, ExperimentConfig};
pub use run::{run, RunError, RunOptions, RunReport};
