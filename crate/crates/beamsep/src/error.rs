//! Crate-wide error type and exit-code mapping for the CLI.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented range or relationship.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Input data is malformed or inconsistent (shapes, lengths, ranges).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Tensor dimensions do not agree between operands.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A numerical procedure failed (degenerate matrix, non-finite value).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// An attention loss provider failed; carries the stream index so the
    /// caller can tell which output stream broke the pipeline.
    #[error("attention loss provider failed for stream {stream}: {message}")]
    AttentionProvider { stream: usize, message: String },

    #[error("wav file {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 1,
            Error::InvalidInput(_)
            | Error::ShapeMismatch(_)
            | Error::Wav { .. }
            | Error::Io { .. }
            | Error::Json { .. } => 2,
            Error::Numeric(_) | Error::AttentionProvider { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_documented_mapping() {
        assert_eq!(Error::InvalidConfig("x".into()).exit_code(), 1);
        assert_eq!(Error::InvalidInput("x".into()).exit_code(), 2);
        assert_eq!(Error::ShapeMismatch("x".into()).exit_code(), 2);
        assert_eq!(
            Error::io("p", std::io::Error::new(std::io::ErrorKind::NotFound, "x")).exit_code(),
            2
        );
        assert_eq!(Error::Numeric("x".into()).exit_code(), 3);
        assert_eq!(
            Error::AttentionProvider {
                stream: 0,
                message: "x".into()
            }
            .exit_code(),
            3
        );
    }
}
