use serde::{Deserialize, Serialize};

use crate::error::{MfcError, Result};
use crate::fbsde::{fit, picard_solve, riccati_oracle_lq1d, Basis, PicardConfig};
use crate::feedback::FeedbackMap;
use crate::model::{Partition, ProblemSpec};
use crate::pontryagin::adjoint::{Frozen, GradientField};
use crate::reduce::tree_mean;
use crate::sim::{feedback_controls, project_control_to_partition, record, BrownianStore, ControlPath, Trajectory};

/// Where the descent starts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Zero,
    /// The problem's feedback evaluated along its own flow, with the adjoint
    /// taken from the Riccati solution for LQ problems and from a Picard solve
    /// otherwise.
    #[default]
    Feedback,
}

/// Whether each particle carries its own control or all share one value per interval.
///
/// Per-particle descent moves along the regression of the gradient on the
/// current state, an estimate of its conditional expectation given the
/// particle's past. The raw per-particle gradient depends on the particle's
/// future noise and would produce anticipating controls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    #[default]
    PerParticle,
    Common,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Target for the optimality-gap certificate.
    pub tol_gap: f64,
    pub max_iters: usize,
    pub init: InitKind,
    pub mode: ControlMode,
    /// Halvings allowed in one line search.
    pub max_backtracks: usize,
    /// Regression basis for the per-particle search direction.
    pub basis: Basis,
    /// State steps per control interval; above 1 the cost is the
    /// continuous-state surrogate.
    pub refinement: usize,
    /// Used when the warm start needs a Picard solve.
    pub fbsde: PicardConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            tol_gap: 1e-6,
            max_iters: 500,
            init: InitKind::Feedback,
            mode: ControlMode::PerParticle,
            max_backtracks: 60,
            basis: Basis::Affine,
            refinement: 1,
            fbsde: PicardConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.tol_gap >= 0.0) {
            return Err(MfcError::config("optimizer tol_gap must be nonnegative"));
        }
        if self.refinement == 0 {
            return Err(MfcError::config("optimizer refinement must be at least 1"));
        }
        if self.max_backtracks == 0 {
            return Err(MfcError::config("optimizer max_backtracks must be positive"));
        }
        self.fbsde.check()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizeResult {
    #[serde(skip)]
    pub control: ControlPath,
    pub cost: f64,
    pub cost_std: f64,
    /// Upper bound on `J(control) - min J` under the frozen noise.
    pub gap_certificate: f64,
    /// Accepted descent steps.
    pub iterations: usize,
    pub converged: bool,
    /// H2 norm of the gradient mapping at every step.
    pub gradient_norms: Vec<f64>,
    /// Cost before the first step and after every accepted step.
    pub costs: Vec<f64>,
}

fn inner_h2(a: &ControlPath, b: &ControlPath) -> f64 {
    let (m, k) = (a.particles(), a.dim());
    let part = a.partition();
    let (va, vb) = (a.values(), b.values());
    tree_mean(m, |p| {
        let mut s = 0.0;
        for i in 0..part.intervals() {
            let base = (i * m + p) * k;
            let mut row = 0.0;
            for c in 0..k {
                row += va[base + c] * vb[base + c];
            }
            s += row * part.h(i);
        }
        s
    })
}

/// Replaces every interval's values by their particle average.
fn average_particles(path: &mut ControlPath) {
    let (m, k) = (path.particles(), path.dim());
    for i in 0..path.partition().intervals() {
        let row = crate::reduce::row_mean(path.interval(i), k);
        for p in 0..m {
            path.interval_mut(i)[p * k..(p + 1) * k].copy_from_slice(&row);
        }
    }
}

/// H2 projection of the gradient's representer onto the admissible directions.
fn direction(grad: &GradientField, traj: &Trajectory, knots: &[usize], mode: ControlMode, basis: Basis) -> Result<ControlPath> {
    let mut rep = grad.h2_representer();
    match mode {
        ControlMode::Common => average_particles(&mut rep),
        ControlMode::PerParticle => {
            let (n, k) = (traj.n, traj.k);
            for i in 0..rep.partition().intervals() {
                let xs = &traj.states[knots[i]];
                let proj = fit(basis, n, xs, rep.interval(i), k, i)?.predict_cloud(xs);
                rep.interval_mut(i).copy_from_slice(&proj);
            }
        }
    }
    Ok(rep)
}

/// Regression of the gradient's H2 representer on the state at each interval's
/// left end.
pub fn adapted_representer(grad: &GradientField, traj: &Trajectory, basis: Basis) -> Result<ControlPath> {
    let knots = traj.partition.refinement_map(grad.partition())?;
    direction(grad, traj, &knots, ControlMode::PerParticle, basis)
}

fn axpy(alpha: &ControlPath, s: f64, dir: &ControlPath) -> ControlPath {
    let vals = alpha.values().iter().zip(dir.values()).map(|(a, d)| a - s * d).collect();
    ControlPath::new(alpha.partition().clone(), alpha.particles(), alpha.dim(), vals).expect("same shape")
}

fn difference(a: &ControlPath, b: &ControlPath) -> ControlPath {
    let vals = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    ControlPath::new(a.partition().clone(), a.particles(), a.dim(), vals).expect("same shape")
}

/// Controls recorded while the problem's feedback drives the particle system.
fn warm_start(
    spec: &ProblemSpec,
    partition: &Partition,
    m: usize,
    store: &BrownianStore,
    frozen: &Frozen,
    config: &OptimizerConfig,
) -> Result<ControlPath> {
    match &spec.lq {
        Some(lq) => {
            let mean = spec.initial_law.mean()[0];
            let var = spec.initial_law.variance()[0];
            let field = riccati_oracle_lq1d(&lq.coeffs, &lq.terminal, spec.horizon(), mean, var, 4096)?;
            let map = FeedbackMap::new(spec)?;
            let fine = &frozen.fine;
            let traj = record(
                spec,
                fine,
                frozen.initial.clone(),
                &frozen.noise,
                feedback_controls(&map, &field, fine, spec.n()),
            )?;
            project_control_to_partition(&traj.control_path()?, partition)
        }
        None => picard_solve(spec, partition, m, store, &config.fbsde)?.control_path(),
    }
}

fn frozen_for(spec: &ProblemSpec, partition: &Partition, m: usize, store: &BrownianStore, config: &OptimizerConfig) -> Result<Frozen> {
    let fine = partition.refine(config.refinement)?;
    Frozen::new(spec, partition, &fine, m, store)
}

/// Projected gradient descent on the discrete cost in the H2 metric, from
/// the configured starting point.
pub fn projected_gradient_descent(
    spec: &ProblemSpec,
    partition: &Partition,
    m: usize,
    store: &BrownianStore,
    config: &OptimizerConfig,
) -> Result<OptimizeResult> {
    config.check()?;
    spec.check()?;
    let frozen = frozen_for(spec, partition, m, store, config)?;
    let start = match config.init {
        InitKind::Zero => ControlPath::zeros(partition.clone(), m, spec.k()),
        InitKind::Feedback => warm_start(spec, partition, m, store, &frozen, config)?,
    };
    descend(spec, &frozen, start, config)
}

/// Projected gradient descent from a given control.
pub fn projected_gradient_descent_from(
    spec: &ProblemSpec,
    partition: &Partition,
    m: usize,
    store: &BrownianStore,
    config: &OptimizerConfig,
    start: ControlPath,
) -> Result<OptimizeResult> {
    config.check()?;
    spec.check()?;
    if start.partition() != partition || start.particles() != m || start.dim() != spec.k() {
        return Err(MfcError::config("starting control does not match the partition, M or control dimension"));
    }
    let frozen = frozen_for(spec, partition, m, store, config)?;
    descend(spec, &frozen, start, config)
}

fn descend(spec: &ProblemSpec, frozen: &Frozen, mut alpha: ControlPath, config: &OptimizerConfig) -> Result<OptimizeResult> {
    let lam = spec.lambda();
    if !(lam > 0.0) {
        return Err(MfcError::config("projected gradient descent needs lambda1 + lambda2 > 0"));
    }
    if config.mode == ControlMode::Common {
        average_particles(&mut alpha);
    }
    alpha.project_into(&spec.action);

    let (mut traj, mut cost, mut cost_std) = frozen.forward(spec, &alpha)?;
    let (mut grad, _) = frozen.backward(spec, &traj)?;
    let mut costs = vec![cost];
    let mut norms = Vec::new();
    let mut step = initial_step(spec, frozen, &alpha, &grad, &traj, config)?;
    let mut certificate = f64::INFINITY;

    for iter in 0..config.max_iters {
        let dir = direction(&grad, &traj, &frozen.knots, config.mode, config.basis)?;
        let mut s = step;
        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            let mut cand = axpy(&alpha, s, &dir);
            cand.project_into(&spec.action);
            let diff = difference(&cand, &alpha);
            let dsq = inner_h2(&diff, &diff);
            if dsq == 0.0 {
                norms.push(0.0);
                return Ok(OptimizeResult {
                    control: alpha,
                    cost,
                    cost_std,
                    gap_certificate: 0.0,
                    iterations: iter,
                    converged: true,
                    gradient_norms: norms,
                    costs,
                });
            }
            match frozen.forward(spec, &cand) {
                Ok((t, c, sd)) => {
                    let model = cost + grad.pairing(&diff)? + dsq / (2.0 * s);
                    if c <= model && c <= cost {
                        accepted = Some((cand, t, c, sd, dsq));
                        break;
                    }
                }
                Err(MfcError::Divergence { .. }) => {}
                Err(e) => return Err(e),
            }
            s *= 0.5;
        }
        let Some((cand, t, c, sd, dsq)) = accepted else {
            return Err(MfcError::LineSearch(format!(
                "no sufficient decrease after {} halvings at iteration {iter} (cost {cost:e})",
                config.max_backtracks
            )));
        };
        let gnorm = dsq.sqrt() / s;
        norms.push(gnorm);
        certificate = gnorm * gnorm / (4.0 * lam);
        alpha = cand;
        traj = t;
        cost = c;
        cost_std = sd;
        costs.push(cost);
        if certificate <= config.tol_gap {
            return Ok(OptimizeResult {
                control: alpha,
                cost,
                cost_std,
                gap_certificate: certificate,
                iterations: iter + 1,
                converged: true,
                gradient_norms: norms,
                costs,
            });
        }
        grad = frozen.backward(spec, &traj)?.0;
        step = 2.0 * s;
    }
    Ok(OptimizeResult {
        control: alpha,
        cost,
        cost_std,
        gap_certificate: certificate,
        iterations: config.max_iters,
        converged: false,
        gradient_norms: norms,
        costs,
    })
}

/// `1 / L` with `L` the gradient change over a small probe step.
fn initial_step(
    spec: &ProblemSpec,
    frozen: &Frozen,
    alpha: &ControlPath,
    grad: &GradientField,
    traj: &Trajectory,
    config: &OptimizerConfig,
) -> Result<f64> {
    let dir = direction(grad, traj, &frozen.knots, config.mode, config.basis)?;
    let norm = inner_h2(&dir, &dir).sqrt();
    if norm == 0.0 {
        return Ok(1.0);
    }
    let scale = 1e-4 * (1.0 + inner_h2(alpha, alpha).sqrt()) / norm;
    let probe = axpy(alpha, scale, &dir);
    let (t2, g2) = match frozen.forward(spec, &probe) {
        Ok((t, _, _)) => {
            let g = frozen.backward(spec, &t)?.0;
            (t, g)
        }
        Err(MfcError::Divergence { .. }) => return Ok(1.0),
        Err(e) => return Err(e),
    };
    let change = difference(&direction(&g2, &t2, &frozen.knots, config.mode, config.basis)?, &dir);
    let l = inner_h2(&change, &change).sqrt() / (scale * norm);
    Ok(if l.is_finite() && l > 0.0 { 1.0 / l } else { 1.0 })
}
