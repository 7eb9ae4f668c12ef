use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is numerically singular (smallest singular value {0:.3e})")]
    Singular(f64),

    #[error("under-resolved: {0}; refine the sampling")]
    Resolution(String),

    #[error("matrix logarithm branch is ill-defined: {0}")]
    Branch(String),

    #[error("band gap closed: {0}")]
    GapClosed(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("gauge extension failed: {0}")]
    Extension(String),

    #[error("band tracking failed: {0}")]
    Tracking(String),

    #[error("inconsistent invariants: {0}")]
    Inconsistent(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }

    pub fn is_resolution(&self) -> bool {
        matches!(self, Error::Resolution(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
