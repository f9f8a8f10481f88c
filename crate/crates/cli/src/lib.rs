//! Experiment plumbing behind the `qpd-strat` binary: configuration files,
//! the four subcommands and their deterministic outputs.

pub mod commands;
pub mod config;

pub use commands::{certify, dp_weights, enumerate, run_experiment, RunOutput};
pub use config::{Design, ExperimentConfig};
