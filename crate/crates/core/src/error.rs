use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("age {age} outside the modelled range ({min}, {max}]")]
    AgeOutOfRange { age: f64, min: f64, max: f64 },

    #[error("contact references unknown participant id {0:?}")]
    OrphanContact(String),

    #[error("duplicate participant id {0:?}")]
    DuplicateParticipant(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("zero population in age band {0}")]
    ZeroPopulation(usize),

    #[error("no observations in contact cell ({0}, {1})")]
    EmptyCell(usize, usize),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
        /// Best iterate reached before giving up.
        best: Vec<f64>,
    },

    #[error("penalized IRLS failed: {reason} (deviance trace: {trace:?})")]
    IrlsFailure { reason: String, trace: Vec<f64> },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::IrlsFailure { .. }
        )
    }
}
