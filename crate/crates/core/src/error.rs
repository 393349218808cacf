use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("cannot place vehicles: {requested} requested but only {capacity} fit at {spacing_m} m spacing")]
    Capacity {
        requested: usize,
        capacity: usize,
        spacing_m: f64,
    },

    #[error("angle out of sector: azimuth {azimuth_deg} deg, elevation {elevation_deg} deg")]
    OutOfSector {
        azimuth_deg: f64,
        elevation_deg: f64,
    },

    #[error("path length {0} m is below the 1 m reference distance")]
    BelowReferenceDistance(f64),

    #[error("no feasible beam: every candidate has no coverage")]
    NoFeasibleBeam,

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("point lies on or outside the Poincare ball (norm {norm}, radius {radius})")]
    OutsideBall { norm: f64, radius: f64 },

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("digest mismatch in {0}")]
    Digest(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Capacity { .. } => ErrorClass::Config,
            Error::NonFiniteGradient(_) | Error::OutsideBall { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
