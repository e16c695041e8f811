use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box (x={x}, y={y}, w={w}, h={h}): width and height must be positive and finite")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("target center ({x:.2}, {y:.2}) lies outside the {width}x{height} frame")]
    TargetLost {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("pooling box lies entirely outside the {width}x{height} feature grid")]
    BoxOutsideGrid { width: usize, height: usize },

    #[error(transparent)]
    FeatureFile(#[from] FeatureFileError),

    #[error(transparent)]
    Sequence(#[from] SequenceError),

    #[error(transparent)]
    HeadFile(#[from] HeadFileError),

    #[error("invalid timing measurement: {0}")]
    InvalidTiming(String),

    #[error("invalid synthetic spec field `{field}`: {message}")]
    SynthSpec { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

/// Errors from reading the binary external-feature format.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureFileError {
    #[error("bad magic: expected \"C2FFEAT1\", found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("truncated header: field `{field}` missing")]
    TruncatedHeader { field: &'static str },

    #[error("invalid dimension: field `{field}` is zero")]
    ZeroDimension { field: &'static str },

    #[error("truncated payload: header declares {expected} values, file holds {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("trailing bytes: {extra} bytes after the declared payload")]
    TrailingBytes { extra: usize },

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
}

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("{path}: missing {what}")]
    Missing { path: PathBuf, what: &'static str },

    #[error("{path}:{line}: cannot parse ground-truth line {content:?}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        content: String,
        reason: String,
    },

    #[error("{path}: {frames} frame images but {boxes} ground-truth boxes")]
    CountMismatch {
        path: PathBuf,
        frames: usize,
        boxes: usize,
    },
}

#[derive(Debug, Error)]
pub enum HeadFileError {
    #[error("{path}: feature configuration hash mismatch (file {found}, current {expected}); retrain the scorer head")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(
        what: &'static str,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
