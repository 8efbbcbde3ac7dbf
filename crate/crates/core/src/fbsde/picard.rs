use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MfcError, Result};
use crate::fbsde::regression::{fit, Basis, LinearFit};
use crate::feedback::{residual_at, Feedback, FeedbackMap};
use crate::model::{mat_tr_vec_add, terminal_adjoint_cloud, Partition, ProblemSpec};
use crate::reduce::{row_mean, tree_mean};
use crate::sim::{drive, AdjointField, BrownianStore, ControlPath, EmpiricalMeasure, Increments, JointMeasure};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardConfig {
    /// Weight of the new field in each update, in `(0, 1]`.
    pub damping: f64,
    pub max_iters: usize,
    /// Stop when the largest per-time L² change of the field is at most this.
    pub tol: f64,
    pub basis: Basis,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { damping: 0.5, max_iters: 200, tol: 1e-7, basis: Basis::Affine }
    }
}

impl PicardConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(MfcError::config(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(MfcError::config("Picard tolerance must be positive and max_iters at least 1"));
        }
        Ok(())
    }
}

/// Regression fits of the adjoint on the state at every grid time, with the
/// empirical means seen along the last forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingField {
    pub basis: Basis,
    pub n: usize,
    pub times: Vec<f64>,
    pub fits: Vec<LinearFit>,
    pub mean_x: Vec<Vec<f64>>,
    pub mean_y: Vec<Vec<f64>>,
    /// One entry per interval.
    pub mean_z: Vec<Vec<f64>>,
}

impl DecouplingField {
    pub fn zero(basis: Basis, n: usize, partition: &Partition) -> Self {
        let times = partition.times().to_vec();
        Self {
            basis,
            n,
            fits: vec![LinearFit::zero(basis, n, n); times.len()],
            times,
            mean_x: Vec::new(),
            mean_y: Vec::new(),
            mean_z: Vec::new(),
        }
    }

    /// Index of the last node at or before `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let tol = 1e-12 * self.times[self.times.len() - 1];
        self.times.partition_point(|s| *s <= t + tol).saturating_sub(1)
    }

    pub fn predict_cloud(&self, i: usize, xs: &[f64]) -> Vec<f64> {
        self.fits[i].predict_cloud(xs)
    }

    /// Standard error of a slope accumulated over the backward recursion from
    /// node `i` to the terminal node.
    pub fn accumulated_slope_se(&self, i: usize, feature: usize, output: usize) -> f64 {
        self.fits[i..].iter().map(|f| f.slope_se(feature, output).powi(2)).sum::<f64>().sqrt()
    }

    fn blended(&self, new: Vec<LinearFit>, theta: f64) -> Self {
        let fits = new.iter().zip(&self.fits).map(|(a, b)| a.blend(b, theta)).collect();
        Self { fits, ..self.clone() }
    }
}

impl AdjointField for DecouplingField {
    fn adjoint(&self, t: f64, states: &EmpiricalMeasure) -> Result<Vec<f64>> {
        if states.dim() != self.n {
            return Err(MfcError::config("decoupling field and states differ in dimension"));
        }
        Ok(self.predict_cloud(self.index_at(t), states.samples()))
    }
}

/// Particle solution of the forward-backward system.
#[derive(Clone, Debug)]
pub struct FBSDESolution {
    pub partition: Partition,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub m: usize,
    /// `N + 1` state clouds.
    pub x: Vec<Vec<f64>>,
    /// `N + 1` adjoint clouds.
    pub y: Vec<Vec<f64>>,
    /// `N` clouds of row-major `n × d` matrices.
    pub z: Vec<Vec<f64>>,
    /// `N` control clouds.
    pub alpha: Vec<Vec<f64>>,
    pub field: DecouplingField,
    pub iterations: usize,
    /// Last field change.
    pub residual: f64,
    pub history: Vec<f64>,
    /// Largest cloud-averaged first-order residual over the grid.
    pub optimality_residual: f64,
    pub noise: Increments,
}

impl FBSDESolution {
    pub fn control_path(&self) -> Result<ControlPath> {
        ControlPath::new(self.partition.clone(), self.m, self.k, self.alpha.concat())
    }

    pub fn state_cloud(&self, i: usize) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::new(self.n, self.x[i].clone())
    }

    pub fn adjoint_cloud(&self, i: usize) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::new(self.n, self.y[i].clone())
    }
}

pub(crate) struct Forward {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
}

/// Simulates the states with controls from `map` fed by the adjoint `field`.
pub(crate) fn forward_pass(
    spec: &ProblemSpec,
    map: &dyn Feedback,
    partition: &Partition,
    x0: Vec<f64>,
    noise: &Increments,
    field: &dyn AdjointField,
    warm: Option<&[Vec<f64>]>,
) -> Result<Forward> {
    let n = spec.n();
    let mut xs = Vec::with_capacity(partition.intervals() + 1);
    let mut ys = Vec::with_capacity(partition.intervals() + 1);
    let mut alpha = Vec::with_capacity(partition.intervals());
    let last = drive(
        spec,
        partition,
        x0,
        noise,
        |i, x| {
            let t = partition.t(i);
            let y = field.adjoint(t, x)?;
            let chi = JointMeasure::new(x.clone(), EmpiricalMeasure::new(n, y)?)?;
            let a = map.evaluate_cloud(t, &chi, warm.map(|w| w[i].as_slice()))?;
            ys.push(chi.second.into_samples());
            Ok(a)
        },
        |_, eta, _| {
            xs.push(eta.first.samples().to_vec());
            alpha.push(eta.second.samples().to_vec());
            Ok(())
        },
    )?;
    ys.push(field.adjoint(partition.horizon(), &last)?);
    xs.push(last.into_samples());
    Ok(Forward { x: xs, y: ys, alpha })
}

/// The backward driver at a (state, adjoint) cloud `chi` and optional `z`
/// cloud: `b1^T y + sigma1^*(z) + grad_x f` at the feedback control plus the
/// cloud average of the measure derivatives. Returns the driver and the controls.
pub fn driver_cloud(
    spec: &ProblemSpec,
    map: &dyn Feedback,
    t: f64,
    chi: &JointMeasure,
    z: Option<&[f64]>,
    warm: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, k, d) = (spec.n(), spec.k(), spec.d());
    let m = chi.len();
    if let Some(z) = z {
        if z.len() != m * n * d {
            return Err(MfcError::config("driver: z cloud has the wrong shape"));
        }
    }
    let alpha = map.evaluate_cloud(t, chi, warm)?;
    let phi = JointMeasure::new(chi.first.clone(), EmpiricalMeasure::new(k, alpha)?)?;
    let c = spec.dynamics.at(t);
    let mut common = vec![0.0; n];
    mat_tr_vec_add(&c.beta_x, chi.second.mean(), &mut common);
    if let Some(z) = z {
        c.add_sigma2_adjoint_z(&row_mean(z, n * d), &mut common);
    }
    let (mu, _) = spec.cost.running.averaged_measure_grads(t, &phi);
    let f = &spec.cost.running;
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n).enumerate().with_min_len(256).for_each(|(p, o)| {
        f.grad_x(t, phi.first.sample(p), phi.second.sample(p), &phi, o);
        mat_tr_vec_add(&c.b1, chi.second.sample(p), o);
        if let Some(z) = z {
            c.add_sigma1_adjoint_z(&z[p * n * d..(p + 1) * n * d], o);
        }
        for j in 0..n {
            o[j] += common[j] + mu[p * n + j];
        }
    });
    crate::error::ensure_finite(&out, "backward driver")?;
    Ok((out, phi.second.into_samples()))
}

/// Regression of `y_next dW^T / h` on the basis, evaluated at `xs`.
#[allow(clippy::too_many_arguments)]
fn regress_z(
    basis: Basis,
    n: usize,
    d: usize,
    xs: &[f64],
    y_next: &[f64],
    dw: &[f64],
    h: f64,
    time_index: usize,
) -> Result<Vec<f64>> {
    let m = xs.len() / n;
    let mut targets = vec![0.0; m * n * d];
    targets.par_chunks_mut(n * d).enumerate().with_min_len(256).for_each(|(p, t)| {
        for r in 0..n {
            for c in 0..d {
                t[r * d + c] = y_next[p * n + r] * dw[p * d + c] / h;
            }
        }
    });
    Ok(fit(basis, n, xs, &targets, n * d, time_index)?.predict_cloud(xs))
}

/// One backward sweep; returns the new fits at every node.
fn backward_pass(
    spec: &ProblemSpec,
    map: &dyn Feedback,
    partition: &Partition,
    basis: Basis,
    fwd: &Forward,
    noise: &Increments,
    need_z: bool,
) -> Result<Vec<LinearFit>> {
    let (n, d) = (spec.n(), spec.d());
    let big_n = partition.intervals();
    let mu_n = EmpiricalMeasure::new(n, fwd.x[big_n].clone())?;
    let g = terminal_adjoint_cloud(spec, &mu_n)?;
    let mut fits = vec![LinearFit::zero(basis, n, n); big_n + 1];
    fits[big_n] = fit(basis, n, &fwd.x[big_n], &g, n, big_n)?;
    let mut y_next = fits[big_n].predict_cloud(&fwd.x[big_n]);
    let mut buf = Vec::new();
    for i in (0..big_n).rev() {
        let (t, h) = (partition.t(i), partition.h(i));
        let xs = &fwd.x[i];
        let z = if need_z {
            let dw = noise.step(i, &mut buf);
            Some(regress_z(basis, n, d, xs, &y_next, dw, h, i)?)
        } else {
            None
        };
        let xcloud = EmpiricalMeasure::new(n, xs.clone())?;
        let mut y = fit(basis, n, xs, &y_next, n, i)?.predict_cloud(xs);
        let mut last = None;
        for _ in 0..2 {
            let chi = JointMeasure::new(xcloud.clone(), EmpiricalMeasure::new(n, y)?)?;
            let (f, _) = driver_cloud(spec, map, t, &chi, z.as_deref(), Some(&fwd.alpha[i]))?;
            let targets: Vec<f64> = y_next.iter().zip(&f).map(|(a, b)| a + h * b).collect();
            let fi = fit(basis, n, xs, &targets, n, i)?;
            y = fi.predict_cloud(xs);
            last = Some(fi);
        }
        fits[i] = last.expect("two sweeps");
        y_next = y;
    }
    Ok(fits)
}

fn l2_gap(a: &[f64], b: &[f64], n: usize) -> f64 {
    let m = a.len() / n;
    tree_mean(m, |p| (0..n).map(|j| (a[p * n + j] - b[p * n + j]).powi(2)).sum()).sqrt()
}

/// Damped Picard iteration on the decoupling field with the problem's own feedback map.
pub fn picard_solve(
    spec: &ProblemSpec,
    partition: &Partition,
    m: usize,
    store: &BrownianStore,
    config: &PicardConfig,
) -> Result<FBSDESolution> {
    spec.check()?;
    let map = FeedbackMap::new(spec)?;
    picard_solve_with(spec, &map, partition, m, store, config)
}

pub fn picard_solve_with(
    spec: &ProblemSpec,
    map: &dyn Feedback,
    partition: &Partition,
    m: usize,
    store: &BrownianStore,
    config: &PicardConfig,
) -> Result<FBSDESolution> {
    config.check()?;
    if (partition.horizon() - spec.horizon()).abs() > 1e-12 * spec.horizon() {
        return Err(MfcError::config("partition horizon differs from the problem horizon"));
    }
    let n = spec.n();
    let noise = Increments::block(store, partition, m)?;
    let x0 = spec.initial_law.sample(store, m);
    let need_z = spec.dynamics.has_state_dependent_noise();
    let mut field = DecouplingField::zero(config.basis, n, partition);
    let mut warm: Option<Vec<Vec<f64>>> = None;
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iters {
        let fwd = forward_pass(spec, map, partition, x0.clone(), &noise, &field, warm.as_deref())?;
        let fits = backward_pass(spec, map, partition, config.basis, &fwd, &noise, need_z)?;
        let change = fits
            .iter()
            .enumerate()
            .map(|(i, f)| l2_gap(&f.predict_cloud(&fwd.x[i]), &fwd.y[i], n))
            .fold(0.0f64, f64::max);
        history.push(change);
        field = field.blended(fits, config.damping);
        warm = Some(fwd.alpha);
        if !change.is_finite() {
            break;
        }
        if change <= config.tol {
            converged = true;
            break;
        }
    }
    let last = history.last().copied().unwrap_or(f64::NAN);
    if !converged {
        return Err(MfcError::NonConvergence {
            what: "Picard iteration".into(),
            iterations: history.len(),
            residual: last,
            history,
        });
    }
    // No warm start here, so the recorded controls are exactly the map's output.
    let mut sol = assemble(spec, map, partition, x0, noise, field)?;
    sol.iterations = history.len();
    sol.residual = last;
    sol.history = history;
    Ok(sol)
}

/// Runs the forward system under a given adjoint field and records the
/// solution with fitted decoupling coefficients.
pub fn solution_from_field(
    spec: &ProblemSpec,
    map: &dyn Feedback,
    partition: &Partition,
    m: usize,
    store: &BrownianStore,
    field: &dyn AdjointField,
    basis: Basis,
) -> Result<FBSDESolution> {
    let noise = Increments::block(store, partition, m)?;
    let x0 = spec.initial_law.sample(store, m);
    let fwd = forward_pass(spec, map, partition, x0.clone(), &noise, field, None)?;
    let fits = (0..=partition.intervals())
        .map(|i| fit(basis, spec.n(), &fwd.x[i], &fwd.y[i], spec.n(), i))
        .collect::<Result<Vec<_>>>()?;
    let df = DecouplingField { fits, ..DecouplingField::zero(basis, spec.n(), partition) };
    finish(spec, partition, fwd, noise, df)
}

fn assemble(
    spec: &ProblemSpec,
    map: &dyn Feedback,
    partition: &Partition,
    x0: Vec<f64>,
    noise: Increments,
    field: DecouplingField,
) -> Result<FBSDESolution> {
    let fwd = forward_pass(spec, map, partition, x0, &noise, &field, None)?;
    finish(spec, partition, fwd, noise, field)
}

fn finish(
    spec: &ProblemSpec,
    partition: &Partition,
    fwd: Forward,
    noise: Increments,
    mut field: DecouplingField,
) -> Result<FBSDESolution> {
    let (n, k, d) = (spec.n(), spec.k(), spec.d());
    let m = noise.particles();
    // Z from the decoupling field: the state Jacobian of the fit times the
    // diffusion. A cloud with no spread (e.g. a deterministic start) does not
    // identify the Jacobian, so the next node's fit stands in.
    let spread = |i: usize| {
        let xs = &fwd.x[i];
        (0..n).all(|j| (0..m).any(|p| xs[p * n + j] != xs[j]))
    };
    let mut z = Vec::with_capacity(partition.intervals());
    for i in 0..partition.intervals() {
        let c = spec.dynamics.at(partition.t(i));
        let xbar = row_mean(&fwd.x[i], n);
        let src = (i..=partition.intervals()).find(|&j| spread(j)).unwrap_or(i);
        let fi = &field.fits[src];
        let mut zi = vec![0.0; m * n * d];
        zi.par_chunks_mut(n * d).enumerate().with_min_len(256).for_each(|(p, out)| {
            let x = &fwd.x[i][p * n..(p + 1) * n];
            let mut jac = vec![0.0; n * n];
            let mut sig = vec![0.0; n * d];
            fi.jacobian(x, &mut jac);
            c.diffusion(x, &xbar, &mut sig);
            for r in 0..n {
                for cc in 0..d {
                    out[r * d + cc] = (0..n).map(|j| jac[r * n + j] * sig[j * d + cc]).sum();
                }
            }
        });
        z.push(zi);
    }
    field.mean_x = fwd.x.iter().map(|v| row_mean(v, n)).collect();
    field.mean_y = fwd.y.iter().map(|v| row_mean(v, n)).collect();
    field.mean_z = z.iter().map(|v| row_mean(v, n * d)).collect();
    let mut opt = 0.0f64;
    for i in 0..partition.intervals() {
        let phi = JointMeasure::from_parts(n, fwd.x[i].clone(), k, fwd.alpha[i].clone())?;
        let ys = EmpiricalMeasure::new(n, fwd.y[i].clone())?;
        opt = opt.max(residual_at(spec, partition.t(i), &phi, &ys));
    }
    Ok(FBSDESolution {
        partition: partition.clone(),
        n,
        k,
        d,
        m,
        x: fwd.x,
        y: fwd.y,
        z,
        alpha: fwd.alpha,
        field,
        iterations: 0,
        residual: 0.0,
        history: Vec::new(),
        optimality_residual: opt,
        noise,
    })
}
