use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("png decode failed: {0}")]
    PngDecode(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate roi: {0}")]
    DegenerateRoi(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("y4m: {0}")]
    Y4m(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("average precision is undefined without ground truths")]
    UndefinedAp,

    #[error("checkpoint has bad magic")]
    BadMagic,

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint header: {0}")]
    CheckpointHeader(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::Shape {
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }
}
