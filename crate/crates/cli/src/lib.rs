//! Command implementations behind the `ionpulse` binary.

pub mod commands;
pub mod config;
pub mod output;

use thiserror::Error;

pub use commands::{run, Cli, Command};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("fit failure: {0}")]
    Fit(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    /// 2 configuration or input error, 3 fit failure, 4 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Fit(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ionpulse::Error> for CliError {
    fn from(e: ionpulse::Error) -> Self {
        use ionpulse::Error as E;
        match e {
            E::InvalidInput(_) | E::Config(_) | E::Parse { .. } => CliError::Config(e.to_string()),
            E::Deconvolution { .. } | E::NonConvergence(_) | E::FitFailure { .. } | E::NonIdentifiable(_) => {
                CliError::Fit(e.to_string())
            }
        }
    }
}
