use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("feature {0} is constant across the dataset")]
    ConstantFeature(usize),
    #[error("dataset contains no samples")]
    EmptyDataset,
    #[error("invalid split fractions: {0}")]
    BadSplit(String),
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("non-uniform timestep at line {0}")]
    NonUniformTimestep(usize),
    #[error("backward called without a recorded forward pass")]
    NoForwardPass,
    #[error("eigensolver failed to converge")]
    ConvergenceFailure,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    DivergenceDetected { epoch: usize },
    #[error("{0} is not positive semi-definite")]
    NotPsd(&'static str),
    #[error("solver hit the iteration cap ({0})")]
    MaxIterations(usize),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("Euler-angle singularity: pitch {0} rad")]
    EulerSingularity(f64),
    #[error("flight generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("truth series is constant; R² undefined")]
    ConstantTruth,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
