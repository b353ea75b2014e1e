use std::path::PathBuf;

use crate::curves::BnslParams;

/// Errors surfaced by every analysis and training entry point.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("fit did not converge after {iterations} iterations (rsle {rsle:.3e}): {message}")]
    FitFailure {
        message: String,
        iterations: usize,
        rsle: f64,
        best: BnslParams,
    },

    #[error("non-finite gradient at step {step} in tensor `{tensor}`")]
    NonFiniteGradient { step: u64, tensor: String },

    #[error("loss diverged at step {step}: {loss:.4} exceeded 3x initial loss {initial:.4} for 100 consecutive steps")]
    Diverged { step: u64, loss: f64, initial: f64 },

    #[error("checksum mismatch for tensor `{tensor}` in {}", path.display())]
    Checksum { tensor: String, path: PathBuf },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::FitFailure { .. } | Error::NonFiniteGradient { .. } | Error::Diverged { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
