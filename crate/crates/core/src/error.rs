use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("orientation too close to gimbal lock (pitch = {pitch} rad)")]
    DegenerateOrientation { pitch: f64 },

    #[error("SO(3) projection failed: matrix is numerically singular (smallest singular value {sigma_min:e})")]
    ProjectionFailed { sigma_min: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("time {t} s outside trajectory span [{start}, {end}] s")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("agents coincide at t = {t} s (distance {distance:e} m)")]
    DegenerateGeometry { t: f64, distance: f64 },

    #[error("missing IMU data: {0}")]
    MissingData(String),

    #[error("need at least {required} camera epochs, got {actual}")]
    InsufficientEpochs { required: usize, actual: usize },

    #[error("camera epochs must be strictly increasing (epoch {index})")]
    NonIncreasingEpochs { index: usize },

    #[error("camera streams are not synchronized at epoch {index} ({t1} s vs {t2} s)")]
    Unsynchronized { index: usize, t1: f64, t2: f64 },

    #[error("degenerate motion: numerical rank {rank} < {unknowns} unknowns")]
    DegenerateMotion { rank: usize, unknowns: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("inconclusive rank: spectral gap ratio {gap:e} below {required:e}")]
    InconclusiveRank { gap: f64, required: f64 },

    #[error("trajectory rejected: {0}")]
    TrajectoryRejected(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
