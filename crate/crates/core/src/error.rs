//! Error type shared by every module in the crate.
//!
//! Variants are grouped by the kind of failure so that callers (notably the
//! command-line front end) can map them onto coarse categories: configuration
//! problems, data problems, and numeric problems.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors met in an operation that their shapes do not support.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// `backward` was asked to differentiate something that is not a scalar.
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    /// A scene annotation referenced an object the knowledge graph does not know.
    #[error("unknown object {name:?} in scene annotation")]
    UnknownObject { name: String },

    /// A structured text file (graph, grammar, dataset) failed to parse.
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    /// A configuration value or combination of values is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A dataset, episode, or checkpoint is missing or internally inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// A checkpoint could not be read, or does not match the model it is
    /// being loaded into.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training or inference produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a path to a raw `std::io::Error`.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }
}
