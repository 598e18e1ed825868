use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("gradient requested for a non-scalar output of shape {0:?}")]
    NonScalarOutput((usize, usize)),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("Cholesky factorization failed even with jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("invalid config at {field}{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        field: String,
        line: Option<usize>,
        msg: String,
    },

    #[error("invalid skeleton: {0}")]
    Skeleton(String),

    #[error("network build failed: {0}")]
    Build(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at step {step} (offending term: {term})")]
    NonFinite { step: usize, term: &'static str },

    #[error("data error at row {row}, column {col}: {msg}")]
    Cell { row: usize, col: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("interaction budget {budget} exceeds cap {cap}; increase the group-Lasso penalty to obtain smaller clusters")]
    Budget { budget: u128, cap: u128 },

    #[error("subset {subset:?} is not contained in any input cluster (pass force to compute anyway)")]
    OutsideClusters { subset: Vec<usize> },

    #[error("model file {path}: {msg}")]
    ModelFile { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }
}
