use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid window: width {window} exceeds panorama width {panorama}")]
    InvalidWindow { window: usize, panorama: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fixture exhausted at t={t}, call {call}")]
    FixtureExhausted { t: usize, call: usize },

    #[error("fixture diverged at t={t}, call {call}: input digest {actual:016x} != recorded {expected:016x}")]
    FixtureDiverged {
        t: usize,
        call: usize,
        expected: u64,
        actual: u64,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("protocol timeout after {millis} ms at t={t}")]
    ProtocolTimeout { t: usize, millis: u128 },

    #[error("calibration failed: no-seam threshold {no_seam:.4} is not below seam threshold {seam:.4}")]
    CalibrationFailed { no_seam: f64, seam: f64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
