//! Problem data: dynamics, costs, action set, initial law and time grids.

mod action;
pub mod builtin;
mod cost;
mod dynamics;
mod hamiltonian;
mod initial;
mod partition;
mod problem;
mod validate;

pub use action::ActionSet;
pub use cost::{CostModel, QuadraticCost, QuadraticTerminal, RunningCost, TerminalCost};
pub use dynamics::{
    frobenius_row_major, mat_tr_vec_add, mat_vec_add, DynamicsAt, LinearDynamics, Mat, ScalarDynamics,
};
pub use hamiltonian::{
    diffusion_pairing, eval_hamiltonian, eval_reduced_hamiltonian, terminal_adjoint, terminal_adjoint_cloud,
};
pub use initial::InitialLaw;
pub use partition::Partition;
pub use problem::{LqData, ProblemKind, ProblemSpec};
pub use validate::{validate_assumptions, ClauseResult, ValidationReport};
