//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes across the library. Variants map onto CLI exit codes and
/// FFI status codes, so new variants should be added rather than reused.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Boundary conditions admit no trajectory (e.g. zero displacement at
    /// rest, or a terminal time collapsing to zero).
    #[error("degenerate boundary: {0}")]
    DegenerateBoundary(String),

    /// Actuation limits still violated after exhausting terminal-time
    /// retries.
    #[error("infeasible segment after {retries} retries (T = {t_final:.4} s): {detail}")]
    InfeasibleSegment {
        retries: u32,
        t_final: f64,
        detail: String,
    },

    #[error("time {t} outside trajectory domain [0, {t_max}]")]
    OutOfRange { t: f64, t_max: f64 },

    #[error("no candidate endpoints available")]
    NoCandidates,

    #[error("free-fall direction is singular; desired attitude undefined")]
    SingularAttitude,

    /// The false-alarm constraint cannot be met within the window; the
    /// source blends into the background.
    #[error("insufficient information: {0}")]
    InsufficientInformation(String),

    #[error("intensity exceeds the thinning majorant: {0}")]
    InvalidBound(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
