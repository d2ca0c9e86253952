//! Command line front end and seeded experiment runner.

pub mod commands;
pub mod experiment;

pub use commands::{run, Cli, CliError};
