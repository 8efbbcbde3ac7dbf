//! Feedback maps from (state, adjoint) to control, and the optimality residual.

mod lq;
mod minimizer;
mod probes;

pub use lq::{lq_feedback, lq_psi_zeta, lq_stationarity_residual, LqAt, LqCoefficients};
pub use minimizer::{projected_gradient, InnerResult};
pub use probes::{coupling_distance_bound, lipschitz_ratio, time_holder_ratio};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MfcError, Result};
use crate::model::{mat_tr_vec_add, ProblemSpec};
use crate::reduce::{tree_mean, tree_sum_vec};
use crate::sim::{EmpiricalMeasure, JointMeasure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackKind {
    LqClosedForm,
    ModifiedHamiltonian,
    ExpectedHamiltonian,
}

/// Anything that turns a (state, adjoint) cloud into one control per particle.
pub trait Feedback: Sync {
    /// `warm` optionally carries previous controls, used as starting points by
    /// iterative maps.
    fn evaluate_cloud(&self, t: f64, chi: &JointMeasure, warm: Option<&[f64]>) -> Result<Vec<f64>>;
}

const MAX_STACK_DIM: usize = 16;

/// Scratch slice of length `k`, on the stack when small.
fn scratch<'b>(buf: &'b mut [f64; MAX_STACK_DIM], heap: &'b mut Vec<f64>, k: usize) -> &'b mut [f64] {
    if k <= MAX_STACK_DIM {
        &mut buf[..k]
    } else {
        heap.resize(k, 0.0);
        &mut heap[..]
    }
}

pub const DEFAULT_TOL_INNER: f64 = 1e-10;
pub const DEFAULT_MAX_INNER: usize = 500;

/// The feedback map attached to a problem.
#[derive(Clone, Copy)]
pub struct FeedbackMap<'a> {
    pub spec: &'a ProblemSpec,
    pub kind: FeedbackKind,
    pub tol_inner: f64,
    pub max_inner: usize,
}

impl<'a> FeedbackMap<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Result<Self> {
        let kind = spec
            .feedback_kind()
            .ok_or_else(|| MfcError::config(format!("problem '{}' has no feedback construction", spec.name)))?;
        Self::with_kind(spec, kind)
    }

    /// Checks the hypotheses of the requested construction.
    pub fn with_kind(spec: &'a ProblemSpec, kind: FeedbackKind) -> Result<Self> {
        match kind {
            FeedbackKind::LqClosedForm => {
                if spec.lq.is_none() || (spec.n(), spec.k()) != (1, 1) || !spec.action.is_full() {
                    return Err(MfcError::config(
                        "closed-form LQ feedback needs scalar LQ data and an unconstrained action set",
                    ));
                }
            }
            FeedbackKind::ModifiedHamiltonian => {
                if spec.cost.running.depends_on_control_law() {
                    return Err(MfcError::config(
                        "modified-Hamiltonian feedback needs a running cost independent of the control law",
                    ));
                }
                if !(spec.cost.lambda1 > 0.0) {
                    return Err(MfcError::config("modified-Hamiltonian feedback needs lambda1 > 0"));
                }
            }
            FeedbackKind::ExpectedHamiltonian => {
                let t = spec.horizon();
                let controlled = (0..1000).any(|j| spec.dynamics.b2.at(t * j as f64 / 999.0).iter().any(|v| *v != 0.0));
                if controlled {
                    return Err(MfcError::config("expected-Hamiltonian feedback needs b2 = 0"));
                }
                if !(spec.lambda() > 0.0) {
                    return Err(MfcError::config("expected-Hamiltonian feedback needs lambda1 + lambda2 > 0"));
                }
            }
        }
        Ok(Self { spec, kind, tol_inner: DEFAULT_TOL_INNER, max_inner: DEFAULT_MAX_INNER })
    }

    /// Control for a single (state, adjoint) point against the cloud `chi`.
    pub fn evaluate(&self, t: f64, x: &[f64], y: &[f64], chi: &JointMeasure) -> Result<Vec<f64>> {
        match self.kind {
            FeedbackKind::LqClosedForm => {
                let lq = &self.spec.lq.as_ref().expect("checked at construction").coeffs;
                Ok(vec![lq_feedback(lq, t, x[0], y[0], chi.first.mean()[0], chi.second.mean()[0])?])
            }
            FeedbackKind::ModifiedHamiltonian => {
                modified_hamiltonian_minimizer(self.spec, t, x, y, chi, None, self.tol_inner, self.max_inner)
                    .map(|r| r.point)
            }
            FeedbackKind::ExpectedHamiltonian => {
                expected_hamiltonian_minimizer(self.spec, t, chi, None, self.tol_inner, self.max_inner).map(|r| r.point)
            }
        }
    }
}

impl Feedback for FeedbackMap<'_> {
    fn evaluate_cloud(&self, t: f64, chi: &JointMeasure, warm: Option<&[f64]>) -> Result<Vec<f64>> {
        let m = chi.len();
        let k = self.spec.k();
        match self.kind {
            FeedbackKind::LqClosedForm => {
                let lq = &self.spec.lq.as_ref().expect("checked at construction").coeffs;
                let (mx, my) = (chi.first.mean()[0], chi.second.mean()[0]);
                // Validate once, then evaluate the affine map per particle.
                lq_feedback(lq, t, 0.0, 0.0, mx, my)?;
                let c = lq.at(t);
                let (psi, zeta) = lq_psi_zeta(lq, t)?;
                let base = psi * mx + (-c.gamma + zeta) * my;
                let inv = 1.0 / (c.q + c.qbar);
                let (xs, ys) = (chi.first.samples(), chi.second.samples());
                Ok((0..m).map(|i| (-c.c * xs[i] - c.b2 * ys[i] + base) * inv).collect())
            }
            FeedbackKind::ModifiedHamiltonian => {
                let ctx = ModifiedContext::new(self.spec, t, chi)?;
                let mut out = vec![0.0; m * k];
                out.par_chunks_mut(k)
                    .enumerate()
                    .try_for_each(|(i, o)| -> Result<()> {
                        let start = warm.map(|w| &w[i * k..(i + 1) * k]);
                        let res = ctx.solve(chi.first.sample(i), chi.second.sample(i), start, self.tol_inner, self.max_inner)?;
                        o.copy_from_slice(&res.point);
                        Ok(())
                    })?;
                Ok(out)
            }
            FeedbackKind::ExpectedHamiltonian => {
                let start = warm.map(|w| w[..k].to_vec());
                let res = expected_hamiltonian_minimizer(self.spec, t, chi, start.as_deref(), self.tol_inner, self.max_inner)?;
                Ok(res.point.repeat(m))
            }
        }
    }
}

fn curvature_estimate<G: FnMut(&[f64], &mut [f64])>(spec: &ProblemSpec, t: f64, at: &[f64], grad: &mut G) -> f64 {
    if let Some(c) = spec.cost.running.curvature_bound(t) {
        return c.max(spec.lambda().max(1e-12));
    }
    // Secant probes along the coordinate axes, inflated for safety.
    let k = at.len();
    let (mut g0, mut g1) = (vec![0.0; k], vec![0.0; k]);
    grad(at, &mut g0);
    let mut l: f64 = 0.0;
    for j in 0..k {
        let mut p = at.to_vec();
        p[j] += 1e-3;
        grad(&p, &mut g1);
        let diff: f64 = g0.iter().zip(&g1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        l = l.max(diff / 1e-3);
    }
    (2.0 * l).max(spec.lambda().max(1e-12))
}

/// Per-time data shared by every particle's modified-Hamiltonian problem.
struct ModifiedContext<'a> {
    spec: &'a ProblemSpec,
    t: f64,
    b2: crate::model::Mat,
    /// `beta_a^T ybar`, the control-mean coupling through the drift.
    mean_pull: Vec<f64>,
    /// State cloud paired with zero controls.
    eta0: JointMeasure,
}

impl<'a> ModifiedContext<'a> {
    fn new(spec: &'a ProblemSpec, t: f64, chi: &JointMeasure) -> Result<Self> {
        let c = spec.dynamics.at(t);
        let mut mean_pull = vec![0.0; spec.k()];
        mat_tr_vec_add(&c.beta_a, chi.second.mean(), &mut mean_pull);
        let eta0 = JointMeasure::new(
            chi.first.clone(),
            EmpiricalMeasure::new(spec.k(), vec![0.0; chi.len() * spec.k()])?,
        )?;
        Ok(Self { spec, t, b2: c.b2, mean_pull, eta0 })
    }

    fn solve(&self, x: &[f64], y: &[f64], start: Option<&[f64]>, tol: f64, max_iters: usize) -> Result<InnerResult> {
        let k = self.spec.k();
        let mut lin = self.mean_pull.clone();
        mat_tr_vec_add(&self.b2, y, &mut lin);
        let f = &self.spec.cost.running;
        let mut grad = |a: &[f64], out: &mut [f64]| {
            f.grad_a(self.t, x, a, &self.eta0, out);
            for (o, l) in out.iter_mut().zip(&lin) {
                *o += l;
            }
        };
        let zero = vec![0.0; k];
        let start = start.unwrap_or(&zero);
        let curv = curvature_estimate(self.spec, self.t, start, &mut grad);
        projected_gradient(&self.spec.action, start, grad, curv, self.spec.cost.lambda1, tol, max_iters)
    }
}

/// Minimizer over the action set of the per-particle modified Hamiltonian
/// `<b0 + b1 x + b2 a, y> + <beta_a a, ybar> + f(t, x, a, mu x delta_0)`.
#[allow(clippy::too_many_arguments)]
pub fn modified_hamiltonian_minimizer(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
    chi: &JointMeasure,
    start: Option<&[f64]>,
    tol_inner: f64,
    max_inner: usize,
) -> Result<InnerResult> {
    if spec.cost.running.depends_on_control_law() {
        return Err(MfcError::config("modified-Hamiltonian minimizer needs f independent of the control law"));
    }
    if !(spec.cost.lambda1 > 0.0) {
        return Err(MfcError::config("modified-Hamiltonian minimizer needs lambda1 > 0"));
    }
    ModifiedContext::new(spec, t, chi)?.solve(x, y, start, tol_inner, max_inner)
}

/// Deterministic minimizer of the cloud-averaged reduced Hamiltonian when
/// every particle plays the same control.
pub fn expected_hamiltonian_minimizer(
    spec: &ProblemSpec,
    t: f64,
    chi: &JointMeasure,
    start: Option<&[f64]>,
    tol_inner: f64,
    max_inner: usize,
) -> Result<InnerResult> {
    let (m, k) = (chi.len(), spec.k());
    let c = spec.dynamics.at(t);
    let mut pull = vec![0.0; k];
    mat_tr_vec_add(&c.beta_a, chi.second.mean(), &mut pull);
    let f = &spec.cost.running;
    let mut eta = JointMeasure::new(chi.first.clone(), EmpiricalMeasure::dirac(&vec![0.0; k], m)?)?;
    let mut err: Option<MfcError> = None;
    let mut grad = |a: &[f64], out: &mut [f64]| {
        match EmpiricalMeasure::dirac(a, m) {
            Ok(am) => eta.second = am,
            Err(e) => {
                err = Some(e);
                out.fill(f64::NAN);
                return;
            }
        }
        let eta = &eta;
        let (_, nu) = f.averaged_measure_grads(t, eta);
        let direct = tree_sum_vec(m, k, |i, acc| {
            let mut buf = [0.0f64; MAX_STACK_DIM];
            let mut heap = Vec::new();
            let g = scratch(&mut buf, &mut heap, k);
            f.grad_a(t, eta.first.sample(i), a, eta, g);
            for (s, v) in acc.iter_mut().zip(g.iter()) {
                *s += v;
            }
        });
        let nu_sum = tree_sum_vec(m, k, |i, acc| {
            for (s, v) in acc.iter_mut().zip(&nu[i * k..(i + 1) * k]) {
                *s += v;
            }
        });
        for j in 0..k {
            out[j] = pull[j] + direct[j] / m as f64 + nu_sum[j] / m as f64;
        }
    };
    let zero = vec![0.0; k];
    let start = start.unwrap_or(&zero);
    let curv = curvature_estimate(spec, t, start, &mut grad);
    let res = projected_gradient(&spec.action, start, &mut grad, curv, spec.lambda(), tol_inner, max_inner);
    if let Some(e) = err {
        return Err(e);
    }
    res
}

/// The (state, control) cloud obtained by applying the feedback to `chi`.
pub fn pushforward_phi(map: &dyn Feedback, k: usize, t: f64, chi: &JointMeasure) -> Result<JointMeasure> {
    let controls = map.evaluate_cloud(t, chi, None)?;
    JointMeasure::new(chi.first.clone(), EmpiricalMeasure::new(k, controls)?)
}

/// Per-particle stationarity vectors `b2^T y + beta_a^T ybar + grad_a f + averaged grad_nu f`
/// at the (state, control) cloud `phi`, row-major `M × k`.
pub fn stationarity_vectors(spec: &ProblemSpec, t: f64, phi: &JointMeasure, ys: &EmpiricalMeasure) -> Vec<f64> {
    let (m, k) = (phi.len(), spec.k());
    let c = spec.dynamics.at(t);
    let mut pull = vec![0.0; k];
    mat_tr_vec_add(&c.beta_a, ys.mean(), &mut pull);
    let (_, nu) = spec.cost.running.averaged_measure_grads(t, phi);
    let mut out = vec![0.0; m * k];
    out.par_chunks_mut(k).enumerate().with_min_len(256).for_each(|(i, v)| {
        spec.cost.running.grad_a(t, phi.first.sample(i), phi.second.sample(i), phi, v);
        mat_tr_vec_add(&c.b2, ys.sample(i), v);
        for j in 0..k {
            v[j] += pull[j] + nu[i * k + j];
        }
    });
    out
}

/// Cloud-averaged violation of the first-order variational inequality.
///
/// For each particle the violation is the natural residual
/// `|a - P_A(a - v)|` with `v` the stationarity vector; it vanishes exactly
/// when the inequality holds and equals `|v|` when the action set is the
/// whole space.
pub fn optimality_residual(spec: &ProblemSpec, map: &dyn Feedback, t: f64, chi: &JointMeasure) -> Result<f64> {
    let k = spec.k();
    let phi = pushforward_phi(map, k, t, chi)?;
    Ok(residual_at(spec, t, &phi, &chi.second))
}

/// The residual for a given (state, control) cloud and adjoint cloud.
pub fn residual_at(spec: &ProblemSpec, t: f64, phi: &JointMeasure, ys: &EmpiricalMeasure) -> f64 {
    let k = spec.k();
    let v = stationarity_vectors(spec, t, phi, ys);
    let a = phi.second.samples();
    tree_mean(phi.len(), |i| {
        let ai = &a[i * k..(i + 1) * k];
        let mut p: Vec<f64> = ai.iter().zip(&v[i * k..(i + 1) * k]).map(|(x, g)| x - g).collect();
        spec.action.project(&mut p);
        ai.iter().zip(&p).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    })
}
