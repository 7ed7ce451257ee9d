use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform to the operation.
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A precondition of an operation was violated.
    #[error("contract violated: {0}")]
    Contract(String),

    /// An invalid configuration value.
    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },

    /// Structural validation of a skeleton or scale definition failed.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error in {}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Checkpoint could not be read or does not match the model.
    #[error("load error: {0}")]
    Load(String),

    /// Loss or gradient became non-finite during training.
    #[error("training error at step {step}: {msg}")]
    Training { step: usize, msg: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
