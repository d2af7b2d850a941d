use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid concept space: {0}")]
    InvalidSpace(String),

    #[error("concept grid size overflows a machine word")]
    GridOverflow,

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing data for concept {concept} value {value}")]
    MissingConceptValue { concept: usize, value: usize },

    #[error("design matrix is rank deficient: rank {rank}, required {required} (deficiency {})", required - rank)]
    RankDeficient { rank: usize, required: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("classes are not linearly separable (closest distance {distance:e})")]
    NotSeparable { distance: f64 },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("on-off pattern violated: residual {residual:e} exceeds tolerance {tol:e}")]
    PatternViolated { residual: f64, tol: f64 },

    #[error("arithmetic overflow: {0}")]
    Overflow(String),

    #[error("malformed dump {path}: {reason}")]
    MalformedDump { path: PathBuf, reason: String },

    #[error("size mismatch in {path}: manifest implies {expected} bytes, payload has {got}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        got: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
