use std::fmt;
use std::path::Path;

/// Process exit status classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Internal = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Data,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Internal,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn kind_of(e: &vipr::Error) -> ExitKind {
    use vipr::Error::*;
    match e {
        InvalidArgument(_) => ExitKind::Usage,
        PngDecode(_) | UnsupportedFormat(_) | Parse { .. } | DegenerateRoi(_) | Validation(_) | Y4m(_)
        | Shape { .. } | UndefinedAp | BadMagic | Truncated(_) | CheckpointHeader(_) | Io(_) => ExitKind::Data,
    }
}

/// Attaches stage and file context to library errors.
pub trait Context<T> {
    fn at(self, stage: &str, file: &Path) -> Result<T, CliError>;
    fn in_stage(self, stage: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for vipr::Result<T> {
    fn at(self, stage: &str, file: &Path) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            kind: kind_of(&e),
            message: format!("{stage}: {}: {e}", file.display()),
        })
    }

    fn in_stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            kind: kind_of(&e),
            message: format!("{stage}: {e}"),
        })
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn at(self, stage: &str, file: &Path) -> Result<T, CliError> {
        self.map_err(|e| CliError::data(format!("{stage}: {}: {e}", file.display())))
    }

    fn in_stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::data(format!("{stage}: {e}")))
    }
}
