use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Phi-function: {0}")]
    InvalidSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid mismatch: expected {expected} values, found {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("conjugate supremum unbounded at y = {y} (bracket grew to {bracket})")]
    Unbounded { y: f64, bracket: f64 },

    #[error("proximal solve did not converge after {iterations} iterations, last bracket [{lo}, {hi}]")]
    ProxNotConverged { lo: f64, hi: f64, iterations: usize },

    #[error("resolvent solve did not converge: residual {last:e} after {} iterations", history.len())]
    ResolventNotConverged { last: f64, history: Vec<f64> },

    #[error("time step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("time grid too coarse for mollifier scale {n}: dt = {dt}, need dt <= {limit}")]
    CoarseTimeGrid { dt: f64, n: usize, limit: f64 },

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
