use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or mismatched dimensions. `path` names the
    /// offending field (dotted path) when one is known.
    #[error("configuration error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    /// A caller broke the server protocol (for example an empty update).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// NaN or infinity where a finite value is required.
    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Protocol(_) => 1,
            Error::Numeric(_) => 2,
            Error::Io { .. } => 3,
        }
    }
}
