//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {reason}")]
    Decode { path: String, reason: String },

    #[error("cannot encode {path}: {reason}")]
    Encode { path: String, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("image too small: {0}")]
    ImageTooSmall(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("metric `{0}` is not implemented")]
    MetricNotImplemented(String),

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("malformed extractor file: {0}")]
    ExtractorFormat(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("feature table error: {0}")]
    FeatureTable(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("bundle error: {0}")]
    Bundle(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
