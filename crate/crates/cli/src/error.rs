use std::fmt::Display;

use xlingual_core::collection::CollectionError;
use xlingual_core::consistency::ConsistencyError;
use xlingual_core::dataset::DatasetError;
use xlingual_core::embedding::{CacheError, EmbeddingError};

/// The command ran but the data failed a check (violations, failed cells,
/// mismatched languages).
pub const EXIT_DOMAIN: u8 = 1;
/// Bad flags or config, unreadable or unwritable files, unreachable
/// services.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(msg: impl Display) -> Self {
        Self {
            code: EXIT_USAGE,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn domain(msg: impl Display) -> Self {
        Self {
            code: EXIT_DOMAIN,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

/// Maps a library error onto an exit code.
pub trait Classify {
    fn exit_code(&self) -> u8;
}

impl Classify for std::io::Error {
    fn exit_code(&self) -> u8 {
        EXIT_USAGE
    }
}

impl Classify for DatasetError {
    fn exit_code(&self) -> u8 {
        match self {
            DatasetError::Io { .. } | DatasetError::InvalidLanguage(_) => EXIT_USAGE,
            DatasetError::Malformed { .. } | DatasetError::Invalid { .. } => EXIT_DOMAIN,
        }
    }
}

impl Classify for CacheError {
    fn exit_code(&self) -> u8 {
        EXIT_USAGE
    }
}

impl Classify for EmbeddingError {
    fn exit_code(&self) -> u8 {
        match self {
            EmbeddingError::Unreachable { .. }
            | EmbeddingError::Auth { .. }
            | EmbeddingError::Config(_)
            | EmbeddingError::Cache(_) => EXIT_USAGE,
            _ => EXIT_DOMAIN,
        }
    }
}

impl Classify for CollectionError {
    fn exit_code(&self) -> u8 {
        match self {
            CollectionError::Config(_)
            | CollectionError::MissingSource(_)
            | CollectionError::Auth { .. }
            | CollectionError::Input { .. }
            | CollectionError::Store { .. }
            | CollectionError::StoreFormat { .. }
            | CollectionError::IncompatibleStore { .. } => EXIT_USAGE,
            _ => EXIT_DOMAIN,
        }
    }
}

impl Classify for ConsistencyError {
    fn exit_code(&self) -> u8 {
        match self {
            ConsistencyError::Io(_)
            | ConsistencyError::MatrixFile { .. }
            | ConsistencyError::UnknownLanguage(_)
            | ConsistencyError::TooFewLanguages(_) => EXIT_USAGE,
            ConsistencyError::Embedding(e) => e.exit_code(),
            _ => EXIT_DOMAIN,
        }
    }
}

impl<E> From<E> for CliError
where
    E: Classify + std::error::Error + Send + Sync + 'static,
{
    fn from(e: E) -> Self {
        Self {
            code: e.exit_code(),
            error: e.into(),
        }
    }
}

pub trait ResultExt<T> {
    /// Classifies the error and prefixes it with `what`.
    fn ctx(self, what: impl Display) -> Result<T, CliError>;
}

impl<T, E> ResultExt<T> for Result<T, E>
where
    E: Classify + std::error::Error + Send + Sync + 'static,
{
    fn ctx(self, what: impl Display) -> Result<T, CliError> {
        self.map_err(|e| {
            let mut err = CliError::from(e);
            err.error = err.error.context(what.to_string());
            err
        })
    }
}
