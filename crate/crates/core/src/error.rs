use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("order {0} is not a power of two")]
    NonPowerOfTwo(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "target dot {target} unreachable after {sweeps} sweeps (best max deviation {best_deviation})"
    )]
    TargetUnreachable {
        target: i64,
        sweeps: usize,
        best_deviation: i64,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("odd length {0}: cannot pair into complex symbols")]
    OddLength(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),

    #[error("degenerate (near-zero) feature vector")]
    DegenerateFeature,

    #[error("sample matrix rank below requested rank {0}")]
    RankDeficient(usize),

    #[error("{users} users exceed the {available} available spreading codes")]
    TooManyUsers { users: usize, available: usize },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("training diverged at epoch {epoch}: total loss {loss}")]
    DivergenceDetected {
        epoch: usize,
        loss: f64,
        /// Per-epoch losses of the epochs that completed.
        partial_trace: Vec<crate::losses::LossBreakdown>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
