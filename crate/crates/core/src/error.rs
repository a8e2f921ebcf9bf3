use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or widths that do not line up.
    #[error("configuration error: {0}")]
    Config(String),
    /// API misuse, e.g. backward without a recorded forward pass.
    #[error("usage error: {0}")]
    Usage(String),
    /// A query argument outside its domain.
    #[error("input error: {0}")]
    Input(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training error in section `{section}`: {message}")]
    Training { section: String, message: String },
    #[error("checkpoint error ({section}): {message}")]
    Checkpoint { section: String, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported camera model `{0}`")]
    UnsupportedModel(String),
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn checkpoint(section: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            section: section.into(),
            message: message.into(),
        }
    }
}
