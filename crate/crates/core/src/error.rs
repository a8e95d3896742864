//! Crate-wide error type and result alias.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("unknown identifier `{name}` at byte {position}")]
    UnknownIdentifier { position: usize, name: String },

    #[error("function `{name}` expects {expected} argument(s), got {got}")]
    ArityMismatch {
        name: String,
        expected: usize,
        got: usize,
    },

    #[error("config error: {0}")]
    Schema(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("evaluation error at t = {t}: {message}")]
    Eval { t: f64, message: String },

    #[error("t = {t} is outside the time domain [{lower}, {upper}]")]
    OutOfDomain { t: f64, lower: f64, upper: f64 },

    #[error("t = {t} is within the exclusion margin of the singular point {point}")]
    ExcludedPoint { t: f64, point: f64 },

    #[error("integration span [{lo}, {hi}] crosses the excluded point {point}")]
    ExcludedInSpan { lo: f64, hi: f64, point: f64 },

    #[error("solution diverged (entry magnitude exceeded {threshold:e}) at t = {at_time}")]
    Divergence { at_time: f64, threshold: f64 },

    #[error("step size underflow at t = {at_time}; system appears too stiff")]
    StepUnderflow { at_time: f64 },

    #[error("system `{system}` has no input matrix B")]
    MissingInput { system: String },

    #[error("system `{system}` has no output matrix C")]
    MissingOutput { system: String },

    #[error("matrix is not symmetric: |G - G^T| = {deviation:e} exceeds {tolerance:e}")]
    Asymmetric { deviation: f64, tolerance: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("Riccati solution blew up at t = {at_time}")]
    RiccatiBlowUp { at_time: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("empty window: no grid points in [{lo}, {hi}]")]
    EmptyWindow { lo: f64, hi: f64 },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
