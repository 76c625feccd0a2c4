use thiserror::Error;

/// Errors produced by tensor operations, entropy models and network code.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("gradients already populated; call zero_grads before running backward again")]
    GradsAlreadyPopulated,
    #[error("tensors belong to different tapes")]
    TapeMismatch,
    #[error("finite-difference eps {0} outside [1e-6, 1e-3]")]
    InvalidEps(f64),
    #[error("{0}")]
    Invalid(String),
}

pub type CoreResult<T> = Result<T, CoreError>;
