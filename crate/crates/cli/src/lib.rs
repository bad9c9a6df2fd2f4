//! Command-line front end: configuration, commands and report formats.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use config::{Format, RunConfig};
pub use error::CliError;
pub use report::Report;
