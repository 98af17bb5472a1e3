use std::path::PathBuf;

use afinet_autograd::AutogradError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] AutogradError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file; `line` is 1-based when known.
    #[error("{path}{}: {msg}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        msg: String,
    },

    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    #[error("checkpoint field `{field}`: {msg}")]
    Checkpoint { field: String, msg: String },

    #[error("non-finite {what} at {stage} epoch {epoch}, step {step}")]
    NonFinite {
        what: &'static str,
        stage: String,
        epoch: usize,
        step: usize,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        line: Option<usize>,
        msg: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn checkpoint(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Checkpoint {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
