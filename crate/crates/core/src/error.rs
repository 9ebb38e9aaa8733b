use thiserror::Error;

/// Errors raised by parameter validation and by the solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("outside stability region: |1 + lambda*h| = {factor} >= 1")]
    OutsideStabilityRegion { factor: f64 },

    #[error("non-finite state in sample {sample} at t = {t}")]
    NonFinite { sample: u64, t: f64 },

    #[error("step-size collapse in sample {sample} at t = {t} (h = {h}) after {attempts} attempts")]
    StepSizeCollapse {
        sample: u64,
        t: f64,
        h: f64,
        attempts: u64,
    },

    #[error("not enough data: {0}")]
    InsufficientData(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: &'static str) -> Error {
    Error::InvalidParameter { name, reason }
}
