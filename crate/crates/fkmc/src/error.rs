use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Power iteration (or deflation) cannot settle on a simple dominant
    /// eigenvalue: reducible or periodic matrix.
    #[error("ambiguous spectrum: {0}")]
    AmbiguousSpectrum(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    /// A minorization certificate is inconsistent with the model it claims
    /// to describe.
    #[error("certificate error: {0}")]
    Certificate(String),

    /// Every residual was excluded from a fit (already converged data).
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// An integral transform (Q e^V, discretization mass, drift check) does
    /// not exist for the requested parameters.
    #[error("divergent integral: {0}")]
    DivergentIntegral(String),

    /// A geometric drift condition could not be certified at any admissible
    /// contraction rate.
    #[error("drift failure: {0}")]
    DriftFailure(String),

    /// All particle weights vanished at the given generation.
    #[error("extinction at generation {generation}")]
    Extinction { generation: usize },

    /// A resource guard refused the computation (exact tensor recursion and
    /// brute-force enumeration have hard size limits).
    #[error("too large: {0}")]
    TooLarge(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
