use std::path::Path;

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] ctglab_core::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 0 success, 1 I/O or data error, 2 configuration error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(ctglab_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

/// Wraps a core error with the path it concerns.
pub(crate) fn at(path: &Path) -> impl FnOnce(ctglab_core::Error) -> CliError + '_ {
    move |e| match e {
        ctglab_core::Error::Io(source) => CliError::io(path, source),
        ctglab_core::Error::Config(_) => CliError::Core(e),
        other => CliError::Data(format!("{}: {other}", path.display())),
    }
}
