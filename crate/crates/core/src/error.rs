use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: u64,
        field: String,
        message: String,
    },

    #[error("line {line}: duplicate txn_id `{txn_id}`")]
    DuplicateTransaction { line: u64, txn_id: String },

    #[error("account `{account}` appears as both internal and external")]
    ConflictingAccountType { account: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-monotonic day: snapshot is at {as_of:?}, got {got}")]
    NonMonotonicDay { as_of: Option<u32>, got: u32 },

    #[error("target false-positive rate {target:.4} unattainable: achieved {achieved:.4} after {iterations} iterations")]
    UnattainableAlertRate {
        target: f64,
        achieved: f64,
        iterations: usize,
    },

    #[error("missing score for account `{account}` on day {day} inside the waiting period")]
    MissingScore { account: String, day: u32 },

    #[error("feature columns mismatch: missing {missing:?}, extra {extra:?}")]
    ColumnMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("training data: {0}")]
    Training(String),

    #[error("{path}: {source}")]
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
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad input data rather than a bug or a bad invocation.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_))
    }
}
