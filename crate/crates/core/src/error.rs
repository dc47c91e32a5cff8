use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("depth {value} m outside (0, {limit}] m")]
    DepthOutOfRange { value: f64, limit: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("distance {distance} m has round trip beyond the repetition period (max {limit} m)")]
    DistanceExceedsRange { distance: f64, limit: f64 },

    #[error("signal-to-background ratio undefined for zero background")]
    ZeroBackground,

    #[error("stream holds {photons} photons, need at least {q}")]
    TooFewPhotons { photons: usize, q: usize },

    #[error("q = {0} is not a power of two")]
    QNotPowerOfTwo(usize),

    #[error("invalid bin count {bin_count} for {bins} time bins")]
    InvalidBinCount { bin_count: usize, bins: usize },

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("bin position {position} outside [0, {bins}]")]
    OutOfRange { position: f64, bins: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("boundary sets differ in q ({0} vs {1})")]
    QMismatch(usize, usize),

    #[error("invalid sweep value {value} for {param}: {reason}")]
    InvalidSweepValue {
        param: String,
        value: f64,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
