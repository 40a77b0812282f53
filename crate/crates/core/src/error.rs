use thiserror::Error;

/// Errors raised by the analytics, models and experiment harnesses.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the domain where the operation is defined.
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    /// A closed form or series would diverge (|lambda| >= 1, pole, ...).
    #[error("divergence: {0}")]
    Divergence(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// An iterative solver stopped before reaching its tolerance.
    #[error("{solver} did not converge after {iterations} iterations")]
    Convergence { solver: &'static str, iterations: usize },

    /// The caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values appeared; `labels` names the offending parameter groups.
    #[error("numerical overflow in {}", labels.join(", "))]
    Overflow { labels: Vec<String> },

    #[error("optimizer probe is uninitialized (step count 0)")]
    ProbeUninitialized,

    /// Every cell of a learning-rate sweep diverged.
    #[error("sweep failed: all {cells} cells diverged")]
    SweepFailure { cells: usize },

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got, context })
    }
}
