use thiserror::Error;

/// Errors raised by the replication library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what} did not converge within {iterations} iterations")]
    Iteration { what: &'static str, iterations: usize },

    /// The adaptive rule ran out of subdivisions; `estimate` is the best value found.
    #[error("quadrature tolerance {tolerance:e} not met (estimate {estimate}, error estimate {error_estimate:e})")]
    Accuracy {
        estimate: f64,
        error_estimate: f64,
        tolerance: f64,
    },

    #[error("point {x} lies outside the grid [{lo}, {hi}]")]
    Range { x: f64, lo: f64, hi: f64 },

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("linear system is numerically singular (condition number {condition_number:e})")]
    Conditioning { condition_number: f64 },

    #[error("error bound violated: exact error {exact:e} exceeds bound {bound:e}")]
    BoundViolation { exact: f64, bound: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, ReplError>;

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ReplError::Domain(format!(
            "{name} must be finite and > 0, got {value}"
        )))
    }
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(ReplError::Domain(format!("{name} must be finite, got {value}")))
    }
}
