use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cannot deconvolve: measured sigma {measured} Hz does not exceed instrument sigma {instrument} Hz")]
    Deconvolution { measured: f64, instrument: f64 },

    #[error("integrator did not converge: {0}")]
    NonConvergence(String),

    #[error("fit failed after {iterations} iterations: {reason}")]
    FitFailure { reason: String, iterations: usize },

    #[error("model is not identifiable: {0}")]
    NonIdentifiable(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn fit(reason: impl Into<String>, iterations: usize) -> Self {
        Error::FitFailure {
            reason: reason.into(),
            iterations,
        }
    }
}
