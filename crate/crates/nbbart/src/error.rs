use std::path::{Path, PathBuf};

use nbbart_core::Error as CoreError;

/// Failures of the command layer, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("sampler failure: {0}")]
    Sampler(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) | AppError::Io { .. } => 3,
            AppError::Sampler(_) => 4,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
        move |source| AppError::Io { path: path.to_path_buf(), source }
    }

    pub fn config(e: impl std::fmt::Display) -> AppError {
        AppError::Config(e.to_string())
    }

    pub fn data(e: impl std::fmt::Display) -> AppError {
        AppError::Data(e.to_string())
    }

    pub fn sampler(e: CoreError) -> AppError {
        AppError::Sampler(e.to_string())
    }
}
