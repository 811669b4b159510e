//! Config-driven experiment runner: the library behind the `qagt` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_run, cmd_sweep, cmd_tune, cmd_verify, Experiment, Overrides};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};
