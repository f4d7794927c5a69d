use thiserror::Error;

/// Errors raised by the numerical building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EscError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("hessian must be sign-definite")]
    NotDefinite,
    #[error("matrix must be negative definite")]
    NotNegativeDefinite,
}

pub type Result<T> = std::result::Result<T, EscError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(EscError::Dimension { expected, got })
    }
}
