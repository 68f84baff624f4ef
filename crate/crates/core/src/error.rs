use thiserror::Error;

/// Crate-wide error type. Variants are grouped by failure class so the CLI
/// can map them onto exit codes (validation vs numeric/runtime).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training aborted: loss became non-finite at epoch {epoch}")]
    NanLoss { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, found: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.into(),
            found: found.into(),
        }
    }

    /// Process exit code for the CLI: 1 for validation problems, 2 for
    /// numeric/runtime failures discovered mid-computation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NanLoss { .. } | Error::NonFinite(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
