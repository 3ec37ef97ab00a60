//! Application-level errors and their process exit codes.

use std::path::{Path, PathBuf};

/// Errors surfaced by the harness, file formats, and CLI.
///
/// Every variant belongs to one error family with a stable exit code, so
/// scripts can branch on the reason a command failed.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Invalid configuration, flags, or config-file contents.
    #[error("configuration error: {0}")]
    Config(String),
    /// File-system failure while reading or writing an artifact.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file exists but its contents violate its format.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    /// The run manifest is missing, inconsistent, or incomplete.
    #[error("manifest error: {0}")]
    Manifest(String),
    /// Numeric or data-level failure inside the core pipeline.
    #[error("pipeline error: {0}")]
    Core(#[from] efeval_core::Error),
    /// No estimate can be produced for the requested round.
    #[error("no estimate: {0}")]
    NoEstimate(String),
    /// Another process holds the run lock.
    #[error("lock error: {0}")]
    Lock(String),
    /// Any error annotated with where in the run it happened.
    #[error("round {round}{}: {source}", .class.map(|k| format!(" class {k}")).unwrap_or_default())]
    Context {
        round: usize,
        class: Option<usize>,
        #[source]
        source: Box<AppError>,
    },
}

impl AppError {
    /// Process exit code of this error's family.
    ///
    /// 0 success, 2 configuration, 3 file or manifest, 4 pipeline data or
    /// numerics, 5 no estimate available, 6 lock contention.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Io { .. } | AppError::Format { .. } | AppError::Manifest(_) => 3,
            AppError::Core(_) => 4,
            AppError::NoEstimate(_) => 5,
            AppError::Lock(_) => 6,
            AppError::Context { source, .. } => source.exit_code(),
        }
    }

    /// Wraps an error with the round (and optionally class) being processed.
    pub fn at(self, round: usize, class: Option<usize>) -> AppError {
        AppError::Context {
            round,
            class,
            source: Box::new(self),
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> AppError {
        AppError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, reason: impl Into<String>) -> AppError {
        AppError::Format {
            path: path.as_ref().to_path_buf(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
