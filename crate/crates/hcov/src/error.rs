use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("matrix not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },
    #[error("dense guard exceeded: n = {n} > {guard}")]
    DenseGuardExceeded { n: usize, guard: usize },
    #[error("operands do not share a block cluster tree")]
    TreeMismatch,
    #[error("cg did not converge within {max_iter} iterations (residual {residual:.3e})")]
    CgDidNotConverge { max_iter: usize, residual: f64 },
    #[error("infeasible start")]
    InfeasibleStart,
    #[error("invalid bracket [{a}, {b}]")]
    InvalidBracket { a: f64, b: f64 },
    #[error("cannot draw {target} points with min separation {min_sep}")]
    SubsampleExhausted { target: usize, min_sep: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
