//! Command implementations, metrics and verification suites behind the
//! `reflfield` binary.

pub mod checks;
pub mod commands;
pub mod config;
pub mod metrics;

use std::fmt;

pub use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Core(reflfield::Error),
    Config(String),
    Metric(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Metric(m) => write!(f, "metric: {m}"),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Core(e) => Some(e),
            _ => None,
        }
    }
}

impl From<reflfield::Error> for CliError {
    fn from(e: reflfield::Error) -> Self {
        CliError::Core(e)
    }
}
