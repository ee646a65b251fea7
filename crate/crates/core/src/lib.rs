//! Unbalanced optimal transport with squared-ℓ2 regularization: gradient
//! extrapolation solvers for the primal plan and the distance, a Sinkhorn
//! baseline, rounding to the transportation polytope, and exact oracles.

pub mod color;
pub mod dual;
pub mod error;
pub mod io;
mod newton;
pub mod oracle;
pub mod problem;
pub mod rounding;
pub mod solvers;
pub mod synthetic;

pub use error::{Result, UotError};
