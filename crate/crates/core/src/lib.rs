//! Pointwise algebra for the σ₂ Hessian equation `σ₂(D²u) = 1` on
//! semiconvex solutions: spectra and their perturbation theory, the
//! linearized operator and its ellipticity, the Jacobi inequality for
//! `b = ln λ_max`, and the Legendre–Lewy rotation.

pub mod error;
pub mod jacobi;
pub mod legendre;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod sigma2;
pub mod spectral;
pub mod suites;

pub use error::{Error, Result};
pub use report::{Check, Report};
pub use sigma2::{OnShellPoint, OnShellSampler};
pub use spectral::{eigen_decompose, SymmetricMatrix};
