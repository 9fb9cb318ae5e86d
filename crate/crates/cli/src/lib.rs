//! Command-line harness: benchmark simulation, single-record
//! identification, Monte-Carlo experiments over sensor counts and the
//! capacity table.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod pipeline;

pub use commands::{cmd_capacity, cmd_experiment, cmd_identify, cmd_simulate};
pub use config::{ExperimentConfig, SystemSpec};
pub use error::{CliError, Result};
pub use experiment::{ExperimentSummary, RunRecord, RunStatus};
pub use pipeline::{identify, Identification};
