use thiserror::Error;

/// Errors raised by the crystallization library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmcError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no unique fixed point: alpha*U + beta*I = 0")]
    DegenerateFixedPoint,

    #[error("sigma = 0 has no diffusive stationary law; use the fixed point instead")]
    NoStationaryLaw,

    #[error("forgetting bound is vacuous: c* = {c_star} <= tau_L = {tau_l}")]
    VacuousBound { c_star: f64, tau_l: f64 },

    #[error("quasi-potential diverges at the boundary c = {0}")]
    BoundaryPotential(f64),

    #[error("density went negative ({min}); reduce the internal step")]
    NegativeDensity { min: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("samples must be sorted in non-decreasing order")]
    Unsorted,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown state-action pair ({state}, {action})")]
    UnknownStateAction { state: usize, action: usize },

    #[error("all buffers are empty")]
    EmptyBuffers,

    #[error("experience must enter the liquid buffer with c = 0, got {0}")]
    NonZeroInsert(f64),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("snapshot error: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, AmcError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> AmcError {
    AmcError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
