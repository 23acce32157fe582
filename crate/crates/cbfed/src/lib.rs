//! Mixed finite element solver for the stationary convective
//! Brinkman-Forchheimer extended Darcy equations with a friction-type slip
//! boundary condition on part of the boundary.
//!
//! The discretization uses the MINI (P1-bubble / P1) element pair on
//! structured triangulations of the unit square, a Newton linearization of
//! the convective and damping terms, and an Uzawa iteration with pointwise
//! projection for the slip multiplier. A manufactured-solution harness
//! measures convergence rates against a fine-grid discrete reference.

pub mod config;
pub mod fespace;
pub mod forms;
pub mod linalg;
pub mod manufactured;
pub mod mesh;
pub mod plot;
pub mod solver;

use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum CbfedError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("point ({0}, {1}) lies outside the domain")]
    PointOutsideDomain(f64, f64),
    #[error("linear solve failed: {0}")]
    SolveFailure(String),
    #[error("residual contract violated: relative residual {residual:.3e} exceeds {limit:.3e}")]
    ResidualContract { residual: f64, limit: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
