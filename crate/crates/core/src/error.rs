use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid surface: {0}")]
    InvalidSurface(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("tape mismatch: {0}")]
    TapeMismatch(String),

    #[error("only single-look speckle is supported (got {0} looks)")]
    UnsupportedLooks(u32),

    #[error("non-finite loss at step {step}: {diagnostics}")]
    NonFiniteLoss { step: usize, diagnostics: String },

    #[error("non-finite gradient at step {step}: {diagnostics}")]
    NonFiniteGradient { step: usize, diagnostics: String },

    #[error("bad magic in {path:?}: {found:?}")]
    BadMagic { path: PathBuf, found: Vec<u8> },

    #[error("truncated file {path:?}: expected {expected} bytes, found {found}")]
    TruncatedFile {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at index {index} in {path:?}")]
    NonFiniteValue { path: PathBuf, index: usize },

    #[error("unknown raster kind byte {0}")]
    UnknownRasterKind(u8),

    #[error("unknown scene {0:?}")]
    UnknownScene(String),

    #[error("missing required key {0:?}")]
    MissingKey(String),

    #[error("duplicate key {key:?} on line {line}")]
    DuplicateKey { key: String, line: usize },

    #[error("unknown key {key:?} on line {line}")]
    UnknownKey { key: String, line: usize },

    #[error("cannot parse value for {key:?}: {value:?}")]
    BadValue { key: String, value: String },

    #[error("malformed line {line}: {content:?}")]
    MalformedLine { line: usize, content: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
