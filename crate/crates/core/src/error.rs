use std::path::PathBuf;

use thiserror::Error;

use crate::grid::BusId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context} at line {line}, column {column}: {message}")]
    Parse {
        context: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid case: {0}")]
    Validation(String),

    #[error("load island: the load-load Laplacian block is singular")]
    LoadIsland,

    #[error("unknown bus id {0}")]
    UnknownBus(BusId),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sampling violates Nyquist: rate {rate} Hz must exceed twice the forcing frequency {frequency} Hz")]
    Nyquist { rate: f64, frequency: f64 },

    #[error("duration {duration} s at {rate} Hz is not an integral number of samples")]
    NonIntegralSamples { duration: f64, rate: f64 },

    #[error("trajectory schema error: {0}")]
    Schema(String),

    #[error("insufficient excitation: S0 condition number {condition:.3e} exceeds {limit:.0e}")]
    InsufficientExcitation { condition: f64, limit: f64 },

    #[error("identification failed at generator {bus}: {what}")]
    IdentificationFailed { bus: BusId, what: String },

    #[error("noise covariance is not positive definite")]
    CovarianceNotPositiveDefinite,

    #[error("empty bin range")]
    EmptyBinRange,

    #[error("empty scan")]
    EmptyScan,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, err: &serde_json::Error) -> Self {
        Error::Parse {
            context: context.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
