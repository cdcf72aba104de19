use thiserror::Error;

use crate::marstrand::SpreadReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate subspace pair: {0}")]
    DegeneratePair(String),

    #[error("evaluation grid too coarse: eval cell side {eval_side} exceeds {max_side}")]
    Resolution { eval_side: f64, max_side: f64 },

    #[error(
        "saturation at level {level}: {count} occupied cells outside the usable window [{lower}, {upper}]"
    )]
    Saturation {
        level: u32,
        count: usize,
        lower: f64,
        upper: f64,
    },

    #[error("insufficient scale range: {usable} usable bands, need at least {required}")]
    InsufficientRange { usable: usize, required: usize },

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("precondition violated: {reason}")]
    Precondition {
        reason: String,
        spread: Option<Box<SpreadReport>>,
    },

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors raised by numerical guards (scale windows, resolution, degenerate geometry)
    /// rather than by malformed input.
    pub fn is_numerical_guard(&self) -> bool {
        matches!(
            self,
            Error::Saturation { .. }
                | Error::Resolution { .. }
                | Error::InsufficientRange { .. }
                | Error::DegeneratePair(_)
                | Error::Precondition { .. }
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
