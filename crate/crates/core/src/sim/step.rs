use rayon::prelude::*;

use crate::error::{MfcError, Result};
use crate::feedback::Feedback;
use crate::model::{DynamicsAt, Partition, ProblemSpec};
use crate::reduce::mean_and_stderr;
use crate::sim::{BrownianStore, ControlPath, EmpiricalMeasure, Increments, JointMeasure};

/// Particle states, one row of length `n` per particle.
pub type Ensemble = EmpiricalMeasure;

pub const DIVERGENCE_BOUND: f64 = 1e12;

/// Adjoint values attached to a state cloud, e.g. a decoupling field.
pub trait AdjointField: Sync {
    /// Adjoint value for every particle of `states` at time `t`, row-major `M × n`.
    fn adjoint(&self, t: f64, states: &EmpiricalMeasure) -> Result<Vec<f64>>;
}

/// One explicit Euler step of every particle, with the pre-step empirical means.
pub(crate) fn em_step_raw(c: &DynamicsAt, h: f64, eta: &JointMeasure, dw: &[f64], step: usize) -> Result<Vec<f64>> {
    let (n, k, d) = (c.n, c.k, c.d);
    let m = eta.len();
    if dw.len() != m * d || eta.second.dim() != k || eta.first.dim() != n {
        return Err(MfcError::config("Euler step: shapes of states, controls and increments disagree"));
    }
    let xbar = eta.first.mean();
    let abar = eta.second.mean();
    let xs = eta.first.samples();
    let as_ = eta.second.samples();
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n).enumerate().with_min_len(256).for_each(|(p, o)| {
        let x = &xs[p * n..(p + 1) * n];
        let mut b = [0.0f64; 8];
        let mut heap;
        let drift: &mut [f64] = if n <= 8 {
            &mut b[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        c.drift(x, &as_[p * k..(p + 1) * k], xbar, abar, drift);
        for j in 0..n {
            o[j] = drift[j] * h;
        }
        c.add_diffusion_times(x, xbar, &dw[p * d..(p + 1) * d], o);
        for j in 0..n {
            o[j] += x[j];
        }
    });
    if let Some(p) = out
        .chunks(n)
        .position(|row| row.iter().any(|v| !(v.abs() <= DIVERGENCE_BOUND)))
    {
        let norm = out[p * n..(p + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt();
        return Err(MfcError::Divergence { step, particle: p, norm });
    }
    Ok(out)
}

/// `x + b(t, x, a, eta) h + sigma(t, x, mu) dW` for every particle.
pub fn em_step(spec: &ProblemSpec, t: f64, h: f64, states: &Ensemble, controls: &[f64], dw: &[f64]) -> Result<Ensemble> {
    if !(h > 0.0) {
        return Err(MfcError::config("Euler step needs h > 0"));
    }
    let eta = JointMeasure::new(states.clone(), EmpiricalMeasure::new(spec.k(), controls.to_vec())?)?;
    EmpiricalMeasure::new(spec.n(), em_step_raw(&spec.dynamics.at(t), h, &eta, dw, 0)?)
}

/// Runs the particle system over `partition`. `control(i, states)` returns the
/// controls on interval `i`; `observe(i, eta, dw)` sees every step's
/// (state, control) cloud and increments. Returns the terminal states.
pub fn drive<C, O>(
    spec: &ProblemSpec,
    partition: &Partition,
    initial: Vec<f64>,
    noise: &Increments,
    mut control: C,
    mut observe: O,
) -> Result<Ensemble>
where
    C: FnMut(usize, &Ensemble) -> Result<Vec<f64>>,
    O: FnMut(usize, &JointMeasure, &[f64]) -> Result<()>,
{
    let (n, k) = (spec.n(), spec.k());
    if noise.steps() != partition.intervals() || noise.dim() != spec.d() {
        return Err(MfcError::config("noise does not match the partition or noise dimension"));
    }
    let m = noise.particles();
    if initial.len() != m * n {
        return Err(MfcError::config("initial states do not match the particle count"));
    }
    let mut x = EmpiricalMeasure::new(n, initial)?;
    let mut buf = Vec::new();
    for i in 0..partition.intervals() {
        let a = control(i, &x)?;
        if a.len() != m * k {
            return Err(MfcError::config(format!("control on interval {i} has {} values, expected {}", a.len(), m * k)));
        }
        let eta = JointMeasure::new(x, EmpiricalMeasure::new(k, a)?)?;
        let dw = noise.step(i, &mut buf);
        observe(i, &eta, dw)?;
        let next = em_step_raw(&spec.dynamics.at(partition.t(i)), partition.h(i), &eta, dw, i)?;
        x = EmpiricalMeasure::new(n, next)?;
    }
    Ok(x)
}

/// States at every grid time and controls on every interval.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub partition: Partition,
    pub n: usize,
    pub k: usize,
    /// `N + 1` state arrays, each `M × n`.
    pub states: Vec<Vec<f64>>,
    /// `N` control arrays, each `M × k`.
    pub controls: Vec<Vec<f64>>,
    /// Empirical state means at every grid time.
    pub means: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn particles(&self) -> usize {
        self.states[0].len() / self.n
    }

    pub fn state_cloud(&self, i: usize) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::new(self.n, self.states[i].clone())
    }

    pub fn terminal(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }

    /// The recorded controls as a control path on the trajectory's partition.
    pub fn control_path(&self) -> Result<ControlPath> {
        ControlPath::new(self.partition.clone(), self.particles(), self.k, self.controls.concat())
    }
}

pub(crate) fn record<C>(
    spec: &ProblemSpec,
    partition: &Partition,
    initial: Vec<f64>,
    noise: &Increments,
    control: C,
) -> Result<Trajectory>
where
    C: FnMut(usize, &Ensemble) -> Result<Vec<f64>>,
{
    let mut states = Vec::with_capacity(partition.intervals() + 1);
    let mut controls = Vec::with_capacity(partition.intervals());
    let mut means = Vec::with_capacity(partition.intervals() + 1);
    let last = drive(spec, partition, initial, noise, control, |_, eta, _| {
        states.push(eta.first.samples().to_vec());
        means.push(eta.first.mean().to_vec());
        controls.push(eta.second.samples().to_vec());
        Ok(())
    })?;
    means.push(last.mean().to_vec());
    states.push(last.into_samples());
    Ok(Trajectory { partition: partition.clone(), n: spec.n(), k: spec.k(), states, controls, means })
}

/// Euler scheme on `partition` under a piecewise-constant control.
pub fn simulate_discrete(
    spec: &ProblemSpec,
    partition: &Partition,
    control: &ControlPath,
    m: usize,
    store: &BrownianStore,
) -> Result<Trajectory> {
    if control.partition() != partition || control.particles() != m {
        return Err(MfcError::config("control path does not match the partition or particle count"));
    }
    let noise = Increments::block(store, partition, m)?;
    let initial = spec.initial_law.sample(store, m);
    record(spec, partition, initial, &noise, |i, _| Ok(control.interval(i).to_vec()))
}

/// How controls are produced on a fine grid.
pub enum ControlSource<'a> {
    /// A control path on the fine grid or on any partition it refines.
    Path(&'a ControlPath),
    /// A feedback map fed with adjoints from a field evaluated along the flow.
    Feedback { map: &'a dyn Feedback, field: &'a dyn AdjointField },
}

pub(crate) fn feedback_controls<'a>(
    map: &'a dyn Feedback,
    field: &'a dyn AdjointField,
    partition: &'a Partition,
    n: usize,
) -> impl FnMut(usize, &Ensemble) -> Result<Vec<f64>> + 'a {
    let mut warm: Option<Vec<f64>> = None;
    move |i, x| {
        let t = partition.t(i);
        let y = field.adjoint(t, x)?;
        let chi = JointMeasure::new(x.clone(), EmpiricalMeasure::new(n, y)?)?;
        let a = map.evaluate_cloud(t, &chi, warm.as_deref())?;
        warm = Some(a.clone());
        Ok(a)
    }
}

/// Fine-grid surrogate of the continuous-time dynamics.
pub fn simulate_fine(
    spec: &ProblemSpec,
    fine: &Partition,
    source: ControlSource<'_>,
    m: usize,
    store: &BrownianStore,
) -> Result<Trajectory> {
    let noise = Increments::block(store, fine, m)?;
    let initial = spec.initial_law.sample(store, m);
    match source {
        ControlSource::Path(path) => {
            let path = if path.partition() == fine { path.clone() } else { path.embed(fine)? };
            if path.particles() != m {
                return Err(MfcError::config("control path particle count differs from M"));
            }
            record(spec, fine, initial, &noise, |i, _| Ok(path.interval(i).to_vec()))
        }
        ControlSource::Feedback { map, field } => {
            record(spec, fine, initial, &noise, feedback_controls(map, field, fine, spec.n()))
        }
    }
}

/// Per-particle accumulation of the discretized cost functional.
#[derive(Clone, Debug)]
pub struct CostAccumulator {
    per_particle: Vec<f64>,
}

impl CostAccumulator {
    pub fn new(m: usize) -> Self {
        Self { per_particle: vec![0.0; m] }
    }

    /// Adds `f(t, x_p, a_p, eta) h` for every particle.
    pub fn add_running(&mut self, spec: &ProblemSpec, t: f64, h: f64, eta: &JointMeasure) {
        let f = &spec.cost.running;
        self.per_particle.par_iter_mut().enumerate().with_min_len(256).for_each(|(p, acc)| {
            *acc += f.value(t, eta.first.sample(p), eta.second.sample(p), eta) * h;
        });
    }

    pub fn add_terminal(&mut self, spec: &ProblemSpec, mu: &EmpiricalMeasure) {
        let g = &spec.cost.terminal;
        self.per_particle.par_iter_mut().enumerate().with_min_len(256).for_each(|(p, acc)| {
            *acc += g.value(mu.sample(p), mu);
        });
    }

    pub fn per_particle(&self) -> &[f64] {
        &self.per_particle
    }

    /// Particle average and its standard error.
    pub fn value(&self) -> (f64, f64) {
        mean_and_stderr(&self.per_particle)
    }
}

fn trajectory_cost(spec: &ProblemSpec, traj: &Trajectory) -> Result<(f64, f64)> {
    let m = traj.particles();
    let mut acc = CostAccumulator::new(m);
    for i in 0..traj.partition.intervals() {
        let eta = JointMeasure::from_parts(traj.n, traj.states[i].clone(), traj.k, traj.controls[i].clone())?;
        acc.add_running(spec, traj.partition.t(i), traj.partition.h(i), &eta);
    }
    acc.add_terminal(spec, &traj.state_cloud(traj.partition.intervals())?);
    Ok(acc.value())
}

/// Left-endpoint discretized cost of a trajectory produced under `control`.
pub fn cost_discrete(
    spec: &ProblemSpec,
    partition: &Partition,
    traj: &Trajectory,
    control: &ControlPath,
) -> Result<(f64, f64)> {
    if &traj.partition != partition || control.partition() != partition {
        return Err(MfcError::config("trajectory, control and partition grids differ"));
    }
    for i in 0..partition.intervals() {
        if traj.controls[i] != control.interval(i) {
            return Err(MfcError::config(format!("trajectory was not produced by this control (interval {i})")));
        }
    }
    trajectory_cost(spec, traj)
}

/// Cost of a fine-grid trajectory with its recorded controls.
pub fn cost_fine(spec: &ProblemSpec, fine: &Partition, traj: &Trajectory) -> Result<(f64, f64)> {
    if &traj.partition != fine {
        return Err(MfcError::config("trajectory was not produced on this fine grid"));
    }
    trajectory_cost(spec, traj)
}

/// Sorted-coupling 2-Wasserstein distance between equal-size scalar clouds.
pub fn wasserstein2_1d(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<f64> {
    if p.len() != q.len() || p.dim() != 1 || q.dim() != 1 {
        return Err(MfcError::config("1-D Wasserstein distance needs scalar clouds of equal size"));
    }
    let mut a = p.samples().to_vec();
    let mut b = q.samples().to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((s / a.len() as f64).sqrt())
}
