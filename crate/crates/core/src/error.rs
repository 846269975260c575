use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator and identification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A physical or numerical parameter violates its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The parameter combination makes a constitutive matrix singular.
    #[error("singular parameter: {0}")]
    SingularParameter(String),

    /// The mesh generator could not satisfy the requested geometry.
    #[error("mesh generation failed: {0}")]
    MeshGeneration(String),

    /// A mesh violates one of the structural invariants.
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    /// A text file could not be parsed.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A sparse or dense factorization failed (typically a missing constraint).
    #[error("factorization failed: {0}")]
    Factorization(String),

    /// The time stepper produced a non-finite value.
    #[error("non-finite state at time step {step}")]
    NonFinite { step: usize },

    /// The eigen-solver did not reach its tolerance.
    #[error("eigen-solver did not converge after {iterations} iterations")]
    EigenNotConverged { iterations: usize },

    /// The periodogram has no usable maximum.
    #[error("no spectral peak")]
    NoSpectralPeak,

    /// The forward model failed inside an objective evaluation.
    #[error("objective evaluation failed: {0}")]
    Objective(String),

    /// A selection (subsampling, time window) produced no data.
    #[error("empty selection: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerics rather than by invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Factorization(_)
                | Error::NonFinite { .. }
                | Error::EigenNotConverged { .. }
                | Error::NoSpectralPeak
                | Error::Objective(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
