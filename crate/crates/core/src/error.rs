use thiserror::Error;

/// Errors raised by the sampling toolkit.
#[derive(Debug, Error)]
pub enum EsdError {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("column {column} has zero variance")]
    DegenerateColumn { column: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("singular linear system for component {component}")]
    Singular { component: usize },
    #[error("non-finite state at integration step {step}")]
    Divergence { step: usize },
    #[error("non-finite training loss at epoch {epoch}")]
    TrainingDivergence { epoch: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("linear solver stalled after {iterations} iterations (relative residual {residual:e})")]
    SolverNonConvergence { iterations: usize, residual: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EsdError>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> EsdError {
    EsdError::Parameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(param(name, format!("must be positive and finite, got {value}")))
    }
}
