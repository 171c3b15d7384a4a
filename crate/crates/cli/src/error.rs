use std::path::PathBuf;

use serde::Serialize;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Command failures, each mapped to a documented exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),

    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::MissingInput(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingInput(_) => "missing_input",
            CliError::Validation(_) => "validation",
            CliError::Internal(_) => "internal",
        }
    }

    /// The single JSON line printed on failure.
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            exit: i32,
            message: String,
        }
        serde_json::to_string(&Line {
            error: self.kind(),
            exit: self.exit_code(),
            message: self.to_string(),
        })
        .unwrap_or_else(|_| format!("{{\"error\":\"{}\",\"exit\":{}}}", self.kind(), self.exit_code()))
    }
}

impl From<geoecon_core::Error> for CliError {
    fn from(e: geoecon_core::Error) -> Self {
        use geoecon_core::Error as E;
        match e {
            E::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => CliError::MissingInput(path),
            E::Io { .. } => CliError::Internal(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

/// Fails with [`CliError::MissingInput`] unless `path` exists.
pub fn require(path: &std::path::Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}
