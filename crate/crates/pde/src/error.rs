use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid: {0}")]
    Grid(String),

    #[error("node {node:?} lies on the boundary layer; stencils need one layer of neighbours")]
    BoundaryNode { node: Vec<usize> },

    #[error(
        "line search failed: ellipticity or residual decrease lost at node {node:?} ({reason})"
    )]
    LineSearchFailed { node: Vec<usize>, reason: String },

    #[error("Newton did not reach tolerance in {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("grid function is not shear-convex: min eigenvalue of D²u + κI is {min_eigenvalue:e} at node {node:?}")]
    NotShearConvex {
        node: Vec<usize>,
        min_eigenvalue: f64,
    },

    #[error("interpolation failed at {point:?}: {reason}")]
    Interpolation { point: Vec<f64>, reason: String },

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Core(#[from] sigma2_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
