//! Recovery of PDE coefficients by convex lifting.
//!
//! Products `q·u` that make a coefficient problem nonlinear are replaced by
//! a bivariate unknown `F = u ⊗ q`. Measurements then act linearly on `F`,
//! and the rank-one constraint is relaxed to nuclear-norm minimization.
//! Dual certificates decide whether the relaxation is exact.

pub mod error;
pub mod hilbert;
pub mod internal;
pub mod lowrank;
pub mod acceptance;
pub mod calderon;
pub mod certify;
pub mod cli;
pub mod pde1d;
pub mod quadratic;
pub mod solvers;

pub use error::{Error, Result};
