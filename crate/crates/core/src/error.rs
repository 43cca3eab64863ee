use thiserror::Error;

use crate::network::SubsystemId;

/// Errors raised by the estimator, design and simulation layers.
#[derive(Debug, Error)]
pub enum DkfError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("eigenvalue computation failed: {0}")]
    EigenFailure(String),

    #[error("Riccati iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("envelope rate {lambda} does not exceed spectral radius {spectral_radius}")]
    EnvelopeUndefined { spectral_radius: f64, lambda: f64 },

    #[error("subsystem {0} does not exist")]
    UnknownSubsystem(SubsystemId),

    #[error("subsystem {0} declared more than once")]
    DuplicateSubsystem(SubsystemId),

    #[error("subsystem {from} references unknown neighbor {to}")]
    DanglingCoupling { from: SubsystemId, to: SubsystemId },

    #[error("subsystem {subsystem} is missing data from neighbor {neighbor}")]
    MissingNeighbor {
        subsystem: SubsystemId,
        neighbor: SubsystemId,
    },

    #[error("pair (A, C) of subsystem {0} is not detectable")]
    Undetectable(SubsystemId),

    #[error("local error dynamics of subsystem {id} are not Schur stable (spectral radius {spectral_radius:.6})")]
    NotSchur {
        id: SubsystemId,
        spectral_radius: f64,
    },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("plug-and-play event rejected: {0}")]
    Rejected(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DkfError>;
