use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SddsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("backward called before a recorded forward pass")]
    NoTape,
    #[error("parameter {0} has no gradient")]
    MissingGradient(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("class {class} has no samples")]
    EmptyClass { class: String },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("tensor {name}: {reason}")]
    TensorMismatch { name: String, reason: String },
    #[error("manifest entry {entry}: {reason}")]
    Manifest { entry: String, reason: String },
    #[error("weight container: {0}")]
    Container(String),
    #[error("{0}")]
    Config(String),
    #[error("scenario {id} failed: {reason}")]
    Scenario { id: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = SddsError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> SddsError {
    let path = path.into();
    move |source| SddsError::Io { path, source }
}
