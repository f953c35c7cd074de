//! Operator commands for the loan-fairness workbench.

pub mod commands;
pub mod config;

pub use commands::{run, Cli};
pub use config::{ConfigBuilder, RunConfig};
