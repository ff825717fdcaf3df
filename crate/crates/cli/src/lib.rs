//! Experiment runner behind the `hbrick` binary.

pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, Format};
pub use error::{CliError, ErrorClass};
pub use report::ExperimentReport;
