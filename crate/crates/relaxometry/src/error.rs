//! Crate-wide error type and the process exit codes the CLI maps it to.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for model validation, fitting, and I/O failures.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or input dataset failed validation before any numerics ran.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An iterative fit exhausted its iteration budget without meeting the
    /// convergence criteria (relative cost change or gradient norm).
    #[error("fit did not converge: {0}")]
    FitDidNotConverge(String),

    /// The data cannot determine the requested quantity (rank-deficient
    /// system, coincident initializations, flat series where a rate is
    /// required, ...).
    #[error("degenerate problem: {0}")]
    Degenerate(String),

    /// A spectrum fit was asked for more defects than the data resolves.
    #[error("over-parameterized spectrum fit: {requested} TLS requested, only {resolvable} resolvable peaks")]
    OverParameterized { requested: usize, resolvable: usize },

    /// Filesystem failure (create/read/write).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// CSV (de)serialization failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// A file parsed but does not match the expected schema/contents.
    #[error("schema error: {0}")]
    Schema(String),
}

impl Error {
    /// Process exit code for the CLI.
    ///
    /// * `1` — validation / configuration errors,
    /// * `2` — fit non-convergence (including degeneracy),
    /// * `3` — I/O and serialization failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::OverParameterized { .. } | Error::Schema(_) => 1,
            Error::FitDidNotConverge(_) | Error::Degenerate(_) => 2,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
        }
    }
}
