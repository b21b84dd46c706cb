use crate::trainer::TrainTrace;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// Power iteration ran out of iterations. Carries the last estimate so
    /// callers can still inspect it.
    #[error("no convergence after {iterations} iterations (last estimate {estimate})")]
    NoConvergence { estimate: f64, iterations: usize },

    /// Training hit a non-finite or exploding loss. The partial trace up to
    /// the offending epoch is preserved.
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, trace: Box<TrainTrace> },
}
