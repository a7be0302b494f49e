use thiserror::Error;

/// Errors raised by the analysis kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty matrix: {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("expected {expected} entries for a {rows}x{cols} matrix, got {got}")]
    EntryCount {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("ragged rows: row {row} has {got} entries, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        got: usize,
    },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e} below -{tol:e}")]
    NotPsd { min_eigenvalue: f64, tol: f64 },

    #[error("eigenvalue computation did not converge for a {n}x{n} matrix")]
    EigenFailure { n: usize },

    #[error("invalid probability vector: {0}")]
    Probability(String),

    #[error("invalid transition matrix: {0}")]
    NotStochastic(String),

    #[error("invalid mixture: {0}")]
    Mixture(String),

    #[error("invalid switching law: {0}")]
    Law(String),

    #[error("mixture would need {needed} components (m^k * m0 = {modes}^{steps} * {initial}), cap is {cap}")]
    ComponentCap {
        needed: f64,
        modes: usize,
        steps: usize,
        initial: usize,
        cap: usize,
    },

    #[error("diverged at step {k}: entry magnitude exceeded {bound:e}")]
    Diverged { k: usize, bound: f64 },

    #[error("covariance factorization failed after jitter")]
    Factorization,

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
