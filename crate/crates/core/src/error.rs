use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error at line {line}: {message}")]
    CsvParse { line: u64, message: String },

    #[error("missing required columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unknown facility `{0}`")]
    UnknownFacility(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("backbone not trainable")]
    NotTrainable,

    #[error("backbone not loaded: {0}")]
    BackboneNotLoaded(String),

    #[error("non-finite value in feature coordinate {coordinate} of sample {sample}")]
    NonFinite { sample: usize, coordinate: usize },

    #[error("corrupt artifact {path}: {message}")]
    CorruptArtifact { path: PathBuf, message: String },

    #[error("digest mismatch for {path}: manifest says {expected}, content hashes to {actual}")]
    DigestMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("missing artifact {path}: run `cmf {command}` first")]
    MissingArtifact { path: PathBuf, command: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("pipeline failure: {0}")]
    Pipeline(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
