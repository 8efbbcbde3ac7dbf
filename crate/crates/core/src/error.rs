use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MfcError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite input: {0}")]
    NumericalInput(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("divergence at step {step}, particle {particle}: state norm {norm:e}")]
    Divergence { step: usize, particle: usize, norm: f64 },

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("regression failed at time index {time_index}: {reason}")]
    Regression { time_index: usize, reason: String },

    #[error("line search failed: {0}")]
    LineSearch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl MfcError {
    pub fn config(msg: impl Into<String>) -> Self {
        MfcError::Config(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MfcError::Divergence { .. }
                | MfcError::NonConvergence { .. }
                | MfcError::Regression { .. }
                | MfcError::LineSearch(_)
                | MfcError::NumericalInput(_)
                | MfcError::InsufficientData(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, MfcError>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(MfcError::NumericalInput(format!(
            "{what}: entry {i} is {}",
            values[i]
        ))),
    }
}
