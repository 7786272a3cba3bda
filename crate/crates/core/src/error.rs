use thiserror::Error;

pub type Result<T> = std::result::Result<T, ZdxError>;

#[derive(Debug, Error)]
pub enum ZdxError {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected d={expected}, got d={got}")]
    Dimension { expected: usize, got: usize },

    #[error("observable is not centred: |sum beta| = {residual:e}")]
    NotCentred { residual: f64 },

    #[error("periodic extension: eigenvalue of modulus {modulus} at u = {u:?}")]
    Periodic { u: Vec<f64>, modulus: f64 },

    #[error("series did not converge after {terms} terms: {reason}")]
    NoConvergence { terms: usize, reason: String },

    #[error("grid too coarse: successive refinements disagree ({detail})")]
    GridTooCoarse { detail: String },

    #[error("box growth exhausted at radius {radius}: bracket width {width:e} > tol {tol:e}")]
    BoxExhausted { radius: i64, width: f64, tol: f64 },

    #[error("memory guard: {0}")]
    MemoryGuard(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(ZdxError::Invalid(msg.into()))
}
