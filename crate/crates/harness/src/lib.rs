//! Experiment harness: config files, method × seed matrices, aggregation and
//! output artifacts.

pub mod aggregate;
pub mod artifacts;
pub mod checks;
pub mod config;
pub mod error;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
