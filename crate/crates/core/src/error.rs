use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why a transmission could not deliver a task's bits in time.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum TransmissionError {
    /// Even an unbounded transmission time cannot move `task_bits` with the
    /// given energy: the deliverable-bits supremum is below the payload.
    #[error("transmission infeasible: at most {supremum_bits:.3} bits deliverable")]
    Infeasible { supremum_bits: f64 },
    /// A root exists but, once the power cap is honoured, the transfer does
    /// not finish inside the remaining epoch budget.
    #[error("transmission needs {required_seconds:.3e} s but only {budget_seconds:.3e} s remain")]
    DeadlineExceeded {
        required_seconds: f64,
        budget_seconds: f64,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error(transparent)]
    Transmission(#[from] TransmissionError),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("configuration invalid:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for anything the user can fix in
    /// their inputs, 2 for numerical failures during simulation or training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 2,
            _ => 1,
        }
    }
}
