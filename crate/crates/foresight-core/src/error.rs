use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes:
/// `Config`, `Usage`, `Shape`, and `Spec` are validation failures (exit 2),
/// `Diverged` is a training failure (exit 3), everything else exits 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("task spec error: {0}")]
    Spec(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Usage(_) | Error::Spec(_) => 2,
            Error::Diverged(_) => 3,
            Error::Io(_) | Error::Json(_) => 1,
        }
    }
}
