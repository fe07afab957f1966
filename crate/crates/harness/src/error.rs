use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    /// JSON that does not parse or does not match the schema.
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    /// A document that parsed but failed validation.
    #[error("{}: {source}", path.display())]
    Invalid {
        path: PathBuf,
        source: gpipris_core::Error,
    },

    #[error("invalid experiment spec: {0}")]
    Spec(String),

    #[error("{}: {message}", path.display())]
    Output { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] gpipris_core::Error),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, e: &serde_json::Error) -> Self {
        Self::Parse {
            path: path.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Output {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
