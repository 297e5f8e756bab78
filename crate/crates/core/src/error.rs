use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
///
/// The CLI maps these onto stable exit codes (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {context} (node {index}, value {value})")]
    NonFinite {
        context: String,
        index: usize,
        value: f64,
    },

    #[error("no equilibrium: |p_m| = {p_m} exceeds synchronizing coefficient K = {k}")]
    NoEquilibrium { p_m: f64, k: f64 },

    #[error("integration diverged at t = {time} s")]
    Divergence { time: f64 },

    #[error("training diverged at epoch {epoch} (last finite loss {last_finite_loss})")]
    TrainingDiverged { epoch: usize, last_finite_loss: f64 },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("checkpoint not found: {0}")]
    CheckpointMissing(PathBuf),

    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("corrupt checkpoint field `{field}`: {reason}")]
    CorruptCheckpoint { field: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code for this error: 2 config/input, 3 numerical
    /// divergence, 4 checkpoint mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) => 2,
            Error::NonFinite { .. }
            | Error::Divergence { .. }
            | Error::TrainingDiverged { .. }
            | Error::NonFiniteGradient(_) => 3,
            Error::CheckpointMissing(_)
            | Error::ShapeMismatch(_)
            | Error::CorruptCheckpoint { .. } => 4,
            Error::NoEquilibrium { .. } => 2,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
