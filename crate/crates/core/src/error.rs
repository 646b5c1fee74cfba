use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("power iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("non-finite value in population at generation {generation} ({count} samples)")]
    NonFinite { generation: u64, count: usize },
    #[error("provenance mismatch: {0}")]
    Provenance(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Estimation(_)
            | Error::Consistency(_)
            | Error::NonConvergence { .. }
            | Error::NonFinite { .. } => 3,
            Error::Provenance(_) => 4,
            Error::Io(_) | Error::Json(_) => 1,
        }
    }
}
