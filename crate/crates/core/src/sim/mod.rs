//! Particle simulation of the controlled dynamics and the cost functionals.

mod control;
mod measure;
mod noise;
mod step;

pub use control::{h2_distance, h2_per_particle, project_control_to_partition, ControlPath};
pub use measure::{EmpiricalMeasure, JointMeasure};
pub use noise::{BrownianStore, Increments, NoiseBlock};
pub use step::{
    cost_discrete, cost_fine, drive, em_step, simulate_discrete, simulate_fine, wasserstein2_1d, AdjointField,
    ControlSource, CostAccumulator, Ensemble, Trajectory, DIVERGENCE_BOUND,
};
#[allow(unused_imports)]
pub(crate) use step::{em_step_raw, feedback_controls, record};
