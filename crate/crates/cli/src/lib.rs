//! Scenario-driven front end for the innodyn simulators.

pub mod commands;
pub mod scenario;

pub use commands::{CliError, RunSummary};
pub use scenario::Scenario;
