//! Discrete-adjoint gradients and projected gradient descent over
//! piecewise-constant controls.

mod adjoint;
mod continuous;
mod descent;

pub use adjoint::{discrete_adjoint_gradient, discrete_adjoint_gradient_refined, AdjointSweep, GradientField};
pub use continuous::{continuous_adjoint_simulate, AdjointPaths};
pub use descent::{
    adapted_representer, projected_gradient_descent, projected_gradient_descent_from, ControlMode, InitKind, OptimizeResult,
    OptimizerConfig,
};
