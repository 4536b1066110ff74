use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension {0} outside supported range 2..=8")]
    Dimension(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("Jacobi eigen iteration did not converge after {sweeps} sweeps (max off-diagonal {off_diagonal:e})")]
    NonConvergence { sweeps: usize, off_diagonal: f64 },

    #[error("top eigenvalue is not simple: gap {gap:e} <= tolerance {tol:e}")]
    DegenerateTop { gap: f64, tol: f64 },

    #[error("rejection sampler exhausted after {tries} tries")]
    ExhaustedRejection { tries: usize },

    #[error("third slice violates the linearized constraint (residual {residual:e})")]
    ConstraintViolated { residual: f64 },

    #[error("M + kappa I is not positive definite (min shifted eigenvalue {min_eigenvalue:e})")]
    NotShearConvex { min_eigenvalue: f64 },

    #[error("matrix is singular or not positive definite")]
    Singular,

    #[error("no grid point passed the threshold search")]
    NotFound,

    #[error("point is not on shell: {0}")]
    OffShell(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
