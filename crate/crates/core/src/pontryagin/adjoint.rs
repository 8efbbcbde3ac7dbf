//! Reverse-mode differentiation of the particle Euler scheme.

use rayon::prelude::*;

use crate::error::{ensure_finite, MfcError, Result};
use crate::model::{mat_tr_vec_add, terminal_adjoint_cloud, Partition, ProblemSpec};
use crate::reduce::{row_mean, tree_sum, tree_sum_vec};
use crate::sim::{cost_discrete, cost_fine, record, BrownianStore, ControlPath, Increments, JointMeasure, Trajectory};

/// Derivative of the particle-averaged discrete cost with respect to every
/// control value, laid out like [`ControlPath`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    partition: Partition,
    m: usize,
    k: usize,
    values: Vec<f64>,
}

impl GradientField {
    pub fn new(partition: Partition, m: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != partition.intervals() * m * k {
            return Err(MfcError::config("gradient field shape does not match the partition"));
        }
        ensure_finite(&values, "gradient field")?;
        Ok(Self { partition, m, k, values })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }
    pub fn particles(&self) -> usize {
        self.m
    }
    pub fn dim(&self) -> usize {
        self.k
    }

    /// Raw partial derivatives `dJ / d alpha[i, p, c]`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interval(&self, i: usize) -> &[f64] {
        let w = self.m * self.k;
        &self.values[i * w..(i + 1) * w]
    }

    /// Riesz representer in the H2 inner product `E sum_i h_i <a_i, b_i>`:
    /// the raw derivative times `M / h_i`.
    pub fn h2_representer(&self) -> ControlPath {
        let w = self.m * self.k;
        let mut out = self.values.clone();
        for (i, chunk) in out.chunks_mut(w).enumerate() {
            let s = self.m as f64 / self.partition.h(i);
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        ControlPath::new(self.partition.clone(), self.m, self.k, out).expect("shape checked at construction")
    }

    /// Directional derivative `sum dJ/d alpha * dir`.
    pub fn pairing(&self, dir: &ControlPath) -> Result<f64> {
        if dir.partition() != &self.partition || dir.particles() != self.m || dir.dim() != self.k {
            return Err(MfcError::config("direction does not match the gradient field"));
        }
        let d = dir.values();
        Ok(tree_sum(self.values.len(), |j| self.values[j] * d[j]))
    }

    /// H2 norm of the representer.
    pub fn h2_norm(&self) -> f64 {
        let zero = ControlPath::zeros(self.partition.clone(), self.m, self.k);
        crate::sim::h2_distance(&self.h2_representer(), &zero).expect("same shape")
    }
}

/// Cost, gradient and the adjoint states of one forward/backward sweep.
#[derive(Clone, Debug)]
pub struct AdjointSweep {
    pub cost: f64,
    pub cost_std: f64,
    pub gradient: GradientField,
    /// Per-particle adjoint states `M dJ/dX_i` at every grid time, each `M × n`.
    pub adjoint: Vec<Vec<f64>>,
    pub trajectory: Trajectory,
}

/// Noise and initial states held fixed across evaluations. The state grid
/// `fine` refines the control partition.
pub(crate) struct Frozen {
    pub noise: Increments,
    pub initial: Vec<f64>,
    pub partition: Partition,
    pub fine: Partition,
    /// Fine-grid index of every control knot.
    pub knots: Vec<usize>,
}

impl Frozen {
    pub fn new(spec: &ProblemSpec, partition: &Partition, fine: &Partition, m: usize, store: &BrownianStore) -> Result<Self> {
        if store.dim() != spec.d() {
            return Err(MfcError::config("Brownian store dimension differs from the problem's noise dimension"));
        }
        Ok(Self {
            noise: Increments::block(store, fine, m)?,
            initial: spec.initial_law.sample(store, m),
            partition: partition.clone(),
            fine: fine.clone(),
            knots: fine.refinement_map(partition)?,
        })
    }

    fn refined(&self) -> bool {
        self.fine != self.partition
    }

    pub fn forward(&self, spec: &ProblemSpec, control: &ControlPath) -> Result<(Trajectory, f64, f64)> {
        if control.partition() != &self.partition
            || control.particles() != self.noise.particles()
            || control.dim() != spec.k()
        {
            return Err(MfcError::config("control path does not match the partition, particle count or control dimension"));
        }
        if self.refined() {
            let path = control.embed(&self.fine)?;
            let traj = record(spec, &self.fine, self.initial.clone(), &self.noise, |i, _| Ok(path.interval(i).to_vec()))?;
            let (cost, std) = cost_fine(spec, &self.fine, &traj)?;
            Ok((traj, cost, std))
        } else {
            let part = &self.partition;
            let traj = record(spec, part, self.initial.clone(), &self.noise, |i, _| Ok(control.interval(i).to_vec()))?;
            let (cost, std) = cost_discrete(spec, part, &traj, control)?;
            Ok((traj, cost, std))
        }
    }

    /// Backward recursion through every Euler step of `traj`; fine-step
    /// derivatives are summed over each control interval.
    pub fn backward(&self, spec: &ProblemSpec, traj: &Trajectory) -> Result<(GradientField, Vec<Vec<f64>>)> {
        let part = &traj.partition;
        let (n, k, d) = (spec.n(), spec.k(), spec.d());
        let m = traj.particles();
        let steps = part.intervals();
        let f = &spec.cost.running;
        let mut p = terminal_adjoint_cloud(spec, &traj.state_cloud(steps)?)?;
        let mut adjoint = vec![Vec::new(); steps + 1];
        let mut grad = vec![0.0; steps * m * k];
        let mut buf = Vec::new();
        let inv_m = 1.0 / m as f64;
        for i in (0..steps).rev() {
            let (t, h) = (part.t(i), part.h(i));
            let c = spec.dynamics.at(t);
            let eta = JointMeasure::from_parts(n, traj.states[i].clone(), k, traj.controls[i].clone())?;
            let dw = self.noise.step(i, &mut buf);
            let (mu_avg, nu_avg) = f.averaged_measure_grads(t, &eta);
            let pbar = row_mean(&p, n);

            // Shared mean-adjoint: drift through xbar and noise through xbar.
            let mut shared_x = vec![0.0; n];
            mat_tr_vec_add(&c.beta_x, &pbar, &mut shared_x);
            shared_x.iter_mut().for_each(|v| *v *= h);
            if c.mean_noise {
                let s2 = tree_sum_vec(m, n, |q, acc| {
                    c.add_sigma2_adjoint_dw(&dw[q * d..(q + 1) * d], &p[q * n..(q + 1) * n], acc)
                });
                for (v, s) in shared_x.iter_mut().zip(&s2) {
                    *v += s * inv_m;
                }
            }
            let mut shared_a = vec![0.0; k];
            mat_tr_vec_add(&c.beta_a, &pbar, &mut shared_a);

            let mut next = vec![0.0; m * n];
            let g = &mut grad[i * m * k..(i + 1) * m * k];
            next.par_chunks_mut(n)
                .zip(g.par_chunks_mut(k))
                .enumerate()
                .with_min_len(256)
                .for_each(|(q, (po, go))| {
                    let x = eta.first.sample(q);
                    let a = eta.second.sample(q);
                    let pq = &p[q * n..(q + 1) * n];

                    f.grad_a(t, x, a, &eta, go);
                    for j in 0..k {
                        go[j] += nu_avg[q * k + j] + shared_a[j];
                    }
                    mat_tr_vec_add(&c.b2, pq, go);
                    go.iter_mut().for_each(|v| *v *= h * inv_m);

                    f.grad_x(t, x, a, &eta, po);
                    for j in 0..n {
                        po[j] += mu_avg[q * n + j];
                    }
                    mat_tr_vec_add(&c.b1, pq, po);
                    for j in 0..n {
                        po[j] = po[j] * h + pq[j] + shared_x[j];
                    }
                    c.add_sigma1_adjoint_dw(&dw[q * d..(q + 1) * d], pq, po);
                });
            adjoint[i + 1] = std::mem::replace(&mut p, next);
        }
        adjoint[0] = p;
        if self.refined() {
            let w = m * k;
            let mut coarse = vec![0.0; self.partition.intervals() * w];
            for (i, out) in coarse.chunks_mut(w).enumerate() {
                for j in self.knots[i]..self.knots[i + 1] {
                    for (o, g) in out.iter_mut().zip(&grad[j * w..(j + 1) * w]) {
                        *o += g;
                    }
                }
            }
            grad = coarse;
        }
        Ok((GradientField::new(self.partition.clone(), m, k, grad)?, adjoint))
    }
}

/// Cost of `control` under frozen noise and its exact gradient, obtained by
/// running the Euler scheme forward and its adjoint backward.
pub fn discrete_adjoint_gradient(
    spec: &ProblemSpec,
    partition: &Partition,
    control: &ControlPath,
    m: usize,
    store: &BrownianStore,
) -> Result<AdjointSweep> {
    if control.partition() != partition || control.particles() != m {
        return Err(MfcError::config("control path does not match the partition or particle count"));
    }
    discrete_adjoint_gradient_refined(spec, partition, partition, control, m, store)
}

/// As [`discrete_adjoint_gradient`] with the state simulated on `fine`, a
/// refinement of the control partition.
pub fn discrete_adjoint_gradient_refined(
    spec: &ProblemSpec,
    partition: &Partition,
    fine: &Partition,
    control: &ControlPath,
    m: usize,
    store: &BrownianStore,
) -> Result<AdjointSweep> {
    if control.partition() != partition || control.particles() != m {
        return Err(MfcError::config("control path does not match the partition or particle count"));
    }
    let frozen = Frozen::new(spec, partition, fine, m, store)?;
    let (trajectory, cost, cost_std) = frozen.forward(spec, control)?;
    let (gradient, adjoint) = frozen.backward(spec, &trajectory)?;
    Ok(AdjointSweep { cost, cost_std, gradient, adjoint, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin::null_problem;

    #[test]
    fn null_problem_gradient_is_scaled_control() {
        let spec = null_problem(1.0);
        let part = Partition::new(vec![0.0, 0.25, 0.6, 1.0]).unwrap();
        let m = 4;
        let store = BrownianStore::new(3, 1.0, 20, 1).unwrap();
        let vals: Vec<f64> = (0..3 * m).map(|j| j as f64 * 0.1 - 0.4).collect();
        let ctrl = ControlPath::new(part.clone(), m, 1, vals.clone()).unwrap();
        let sweep = discrete_adjoint_gradient(&spec, &part, &ctrl, m, &store).unwrap();
        for i in 0..3 {
            for p in 0..m {
                let want = vals[i * m + p] * part.h(i) / m as f64;
                assert_eq!(sweep.gradient.interval(i)[p], want);
            }
        }
        let rep = sweep.gradient.h2_representer();
        for (r, v) in rep.values().iter().zip(&vals) {
            assert!((r - v).abs() < 1e-15);
        }
    }

    #[test]
    fn pairing_is_directional_derivative() {
        let part = Partition::uniform(1.0, 2).unwrap();
        let g = GradientField::new(part.clone(), 1, 1, vec![2.0, -1.0]).unwrap();
        let dir = ControlPath::new(part.clone(), 1, 1, vec![0.5, 3.0]).unwrap();
        assert_eq!(g.pairing(&dir).unwrap(), -2.0);
        assert!(GradientField::new(part, 1, 1, vec![f64::NAN, 0.0]).is_err());
    }
}
