//! Forward-backward system: Picard solver with regression backward steps,
//! consistency diagnostics and the scalar LQ ODE oracle.

mod diagnostics;
mod picard;
mod regression;
mod riccati;

pub use diagnostics::{
    fbsde_residual_check, monotonicity_probe, monotonicity_probe_with, residual_check_with, ProbeCloud,
    ResidualDiagnostics,
};
pub use picard::{
    driver_cloud, picard_solve, picard_solve_with, solution_from_field, DecouplingField, FBSDESolution, PicardConfig,
};
pub use regression::{fit, Basis, LinearFit};
pub use riccati::{riccati_oracle_lq1d, RiccatiSolution};
