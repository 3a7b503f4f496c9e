//! Command-line runner: synthesize data, forecast with or without mean
//! reversion, and compare model variants over many forecast origins.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{Overrides, RunConfig};
pub use error::CliError;
