//! Experiment runner for `cgnsda-core`. It drives JSON-configured runs and
//! policy comparisons, and hosts the acceptance checks.

pub mod checks;
pub mod cli;
pub mod compare;
pub mod config;
pub mod error;
pub mod oracles;
pub mod pipeline;
pub mod svg;

pub use error::{CliError, CliResult};
