//! Kernel interpolation on sparse grids over product domains.
//!
//! The interpolant is assembled with the weighted combination technique from
//! full tensor-grid interpolants, each computed by Kronecker-structured
//! directional solves with cached univariate factorizations.

pub mod combitech;
pub mod error;
pub mod functions;
pub mod geometry;
pub mod interpolant;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod solver;
pub mod studies;
pub mod tensor;

pub use error::{Error, Result};
