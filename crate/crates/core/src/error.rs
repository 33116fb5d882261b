use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MdstError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("corrupt corpus: {0}")]
    CorruptCorpus(String),

    #[error("feature lookup failed: no entry for image {0}")]
    FeatureLookup(String),

    #[error("feature format error: {0}")]
    FeatureFormat(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = MdstError> = std::result::Result<T, E>;

impl MdstError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MdstError::Io {
            path: path.into(),
            source,
        }
    }
}
