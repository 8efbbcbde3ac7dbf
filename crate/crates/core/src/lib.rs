//! Numerical laboratory for linear-convex mean-field control: particle
//! simulation, forward-backward solvers, discrete-adjoint optimisation and
//! convergence-rate experiments.

pub mod error;
pub mod fbsde;
pub mod feedback;
pub mod model;
pub mod pontryagin;
pub mod rates;
pub mod reduce;
pub mod sim;
pub mod time_fn;

pub use error::{MfcError, Result};
