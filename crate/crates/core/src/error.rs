use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// State became non-finite during the Euler recursion.
    #[error("simulation diverged at step {step}{}", path.map(|p| format!(" of path {p}")).unwrap_or_default())]
    SimulationDiverged { path: Option<usize>, step: usize },

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("matrix is singular (pivot {pivot:e} at row {row})")]
    SingularMatrix { row: usize, pivot: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("parse error in {}: row {row}: {message}", file.display())]
    Parse {
        file: PathBuf,
        row: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
