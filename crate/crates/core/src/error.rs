use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("volatility matrix is singular (|det| = {det:.3e})")]
    SingularVolatility { det: f64 },

    #[error("constraint set does not contain the origin")]
    OriginNotFeasible,

    #[error("constraint union has no members")]
    EmptyUnion,

    #[error("picard iteration did not converge after {iters} iterations (residual {residual:.3e})")]
    PicardDiverged { iters: usize, residual: f64 },

    #[error("regression design is ill-conditioned at step {step} (condition number {cond:.3e})")]
    IllConditioned { step: usize, cond: f64 },

    #[error("non-positive exponential variable {value:.3e} at step {step}, node {node}")]
    NonPositive { step: usize, node: usize, value: f64 },

    #[error("missing certificate: {0}")]
    MissingCertificate(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("empty grid")]
    EmptyGrid,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidArgument(msg()))
    }
}
