use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator, solvers and scenario layer.
///
/// The CLI maps [`Error::Usage`], [`Error::Config`] and [`Error::Scenario`]
/// to exit code 2 and everything else to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A model or law is configured in a way the theory does not allow.
    #[error("configuration error: {0}")]
    Config(String),

    /// A scenario file failed to parse or validate. `path` names the source;
    /// validation messages start with the dotted field path.
    #[error("scenario error at `{path}`: {message}")]
    Scenario { path: String, message: String },

    /// A particle position stopped being finite.
    #[error("non-finite position at step {step} for particle {particle}")]
    NonFinite { step: u64, particle: usize },

    /// Generic numerical failure (zero-norm retraction and similar).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn scenario(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for usage/schema problems, 1 for domain failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Scenario { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
