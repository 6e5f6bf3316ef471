use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("value out of range: {0}")]
    ValueOutOfRange(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("particle renders below one pixel ({extent_px:.3} px)")]
    ParticleTooSmall { extent_px: f64 },

    #[error("split would leave the {side} side empty ({n} entries, train fraction {fraction})")]
    DegenerateSplit {
        side: &'static str,
        n: usize,
        fraction: f64,
    },

    #[error("split `{0}` has no entries")]
    EmptySplit(String),

    #[error("image is already normalized")]
    AlreadyNormalized,

    #[error("raster does not match patch grid: {0}")]
    GridMismatch(String),

    #[error("expected {expected} patches, got {actual}")]
    PatchCountMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid size bins: {0}")]
    InvalidBins(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
