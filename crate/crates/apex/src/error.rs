use std::path::{Path, PathBuf};

use apex_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    /// Bad input data, configuration or flags.
    #[error("{0}")]
    Validation(String),
    /// A failure while running an otherwise valid command.
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        AppError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    /// 1 for validation problems, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Validation(_) | AppError::Format { .. } => 1,
            AppError::Core(e) if is_input_error(e) => 1,
            _ => 2,
        }
    }
}

fn is_input_error(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::Config(_)
            | CoreError::InvalidFractions(_)
            | CoreError::MissingLabels(_)
            | CoreError::TooFewRecords { .. }
            | CoreError::ClassTooSmall { .. }
            | CoreError::Domain { .. }
            | CoreError::PercentileUndefined(_)
    )
}
