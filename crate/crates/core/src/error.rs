use thiserror::Error;

/// Errors produced by basis construction, model validation and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A domain or model parameter violates its contract.
    #[error("validation: {0}")]
    Validation(String),

    /// Field length does not match the basis it is used with.
    #[error("shape mismatch: expected {expected} coefficients, got {got}")]
    Shape { expected: usize, got: usize },

    /// An operation that only makes sense on a 2-D domain was called in 1-D.
    #[error("{0} requires a 2-D domain")]
    NeedsTwoDim(&'static str),

    /// The operation was called with the wrong model kind.
    #[error("wrong model: {0}")]
    WrongModel(String),

    /// Inner stage solver of the implicit scheme failed to converge.
    #[error("stage solver failed at t = {t}: residual {residual:.3e} after {iters} iterations")]
    StageSolve { t: f64, residual: f64, iters: usize },

    /// Newton iteration on a stationary problem did not converge.
    #[error("newton failed: residual {residual:.3e} after {iters} iterations")]
    NewtonFailed { residual: f64, iters: usize },

    /// Ensemble sampling lost every member to blow-up.
    #[error("empty sample: all {0} ensemble members blew up")]
    EmptySample(usize),

    /// Numeric argument outside its admissible range.
    #[error("argument out of range: {0}")]
    OutOfRange(String),
}

pub type Result<T> = std::result::Result<T, Error>;
