pub mod error;
pub mod grid;
pub mod integral;
pub mod interp;
pub mod invariance;
pub mod io;
pub mod legendre;
pub mod profile;
pub mod scaling;
pub mod solver;
pub mod suites;

pub use error::{Error, Result};
pub use grid::{fd_gradient, fd_hessian, GridFunction};
pub use solver::{newton_solve, SolveResult, SolverOptions};
