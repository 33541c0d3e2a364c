//! Command-line front end for local Bayesian regression: CSV ingestion,
//! configuration, fits with credible bands, bandwidth selection, risk
//! simulations and synthetic data.

pub mod bandwidth_cmd;
pub mod config;
pub mod fit;
pub mod io;
pub mod parallel;
pub mod risk;
pub mod simulate;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("{0}")]
    Core(#[from] locbayes_core::Error),
}

impl CliError {
    /// The message without its category prefix.
    pub fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Io(m) => m.clone(),
            other => other.to_string(),
        }
    }

    /// Process exit code: 2 for configuration and input problems, 1 for
    /// failures inside a fit.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(_) => 1,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
