//! Configuration parsing and experiment running for the `majority-tree` binary.

pub mod config;
pub mod run;

pub use config::{parse_config, ConfigErrors, ExperimentConfig, Kind};
pub use run::{exit_code, run_experiment, Outcome, RunError, Status, OUT_DIR_ENV};
