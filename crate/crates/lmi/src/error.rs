use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("objective has {found} coefficients, expected {expected}")]
    ObjectiveLength { expected: usize, found: usize },
    #[error("block `{block}` has {found} coefficient matrices, expected {expected}")]
    CoeffCount { block: String, expected: usize, found: usize },
    #[error("block `{block}` has inconsistent matrix dimensions")]
    Dimension { block: String },
    #[error("block `{block}` is not symmetric")]
    Asymmetric { block: String },
    #[error("block `{block}` has non-finite entries")]
    NonFinite { block: String },
    #[error("equality {index} has {found} coefficients, expected {expected}")]
    EqualityLength { index: usize, expected: usize, found: usize },
}
