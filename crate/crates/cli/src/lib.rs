//! Experiment driver for the few-shot continual learning laboratory:
//! configuration, pretraining, per-seed runs of any method, deterministic
//! CSV artifacts, checkpoint/resume and report aggregation.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod experiment;
pub mod report;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
