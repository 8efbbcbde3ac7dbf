use serde::Serialize;

use crate::error::{MfcError, Result};
use crate::fbsde::picard::{driver_cloud, FBSDESolution};
use crate::fbsde::regression::fit;
use crate::feedback::{optimality_residual, Feedback, FeedbackMap};
use crate::model::{terminal_adjoint_cloud, Partition, ProblemSpec};
use crate::reduce::{row_mean, tree_mean, tree_sum_vec};
use crate::sim::{em_step_raw, EmpiricalMeasure, JointMeasure};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualDiagnostics {
    /// Largest L² gap between stored states and a one-step re-simulation.
    pub forward_residual: f64,
    /// Largest L² norm of the conditional mean of the one-step backward defect.
    pub backward_residual: f64,
    pub optimality_residual: f64,
    /// Largest |covariance| between the backward defect net of `Z dW` and
    /// `dW`, normalised by the spreads of the defect itself and of `dW`.
    pub martingale_residual: f64,
    /// Monte Carlo scale of `backward_residual` under an exact field.
    pub backward_mc_std: f64,
    /// `1/sqrt(M)`, the sampling scale of that normalised covariance.
    pub martingale_mc_std: f64,
}

fn l2(a: &[f64], n: usize) -> f64 {
    tree_mean(a.len() / n, |p| a[p * n..(p + 1) * n].iter().map(|v| v * v).sum()).sqrt()
}

/// `cov(a, b) / (sd(s) sd(b))`, 0 when `s` or `b` has no spread.
fn scaled_covariance(a: &[f64], s: &[f64], b: &[f64]) -> f64 {
    let m = a.len();
    let t = tree_sum_vec(m, 6, |i, acc| {
        acc[0] += a[i];
        acc[1] += b[i];
        acc[2] += s[i];
        acc[3] += s[i] * s[i];
        acc[4] += b[i] * b[i];
        acc[5] += a[i] * b[i];
    });
    let mf = m as f64;
    let (ma, mb, ms) = (t[0] / mf, t[1] / mf, t[2] / mf);
    let vs = t[3] / mf - ms * ms;
    let vb = t[4] / mf - mb * mb;
    let cov = t[5] / mf - ma * mb;
    let tiny = |v: f64, second: f64| v <= 1e-24 * second.max(f64::MIN_POSITIVE);
    if tiny(vs, t[3] / mf) || tiny(vb, t[4] / mf) {
        0.0
    } else {
        cov / (vs * vb).sqrt()
    }
}

/// Consistency diagnostics of a particle solution, using the problem's feedback map.
pub fn fbsde_residual_check(solution: &FBSDESolution, spec: &ProblemSpec, partition: &Partition) -> Result<ResidualDiagnostics> {
    let map = FeedbackMap::new(spec)?;
    residual_check_with(solution, spec, &map, partition)
}

pub fn residual_check_with(
    solution: &FBSDESolution,
    spec: &ProblemSpec,
    map: &dyn Feedback,
    partition: &Partition,
) -> Result<ResidualDiagnostics> {
    if &solution.partition != partition || solution.n != spec.n() || solution.d != spec.d() {
        return Err(MfcError::config("solution does not belong to this problem and partition"));
    }
    let (n, k, d, m) = (solution.n, solution.k, solution.d, solution.m);
    let big_n = partition.intervals();
    let need_z = spec.dynamics.has_state_dependent_noise();
    let basis = solution.field.basis;
    let p = basis.features(n);
    let mu_n = EmpiricalMeasure::new(n, solution.x[big_n].clone())?;
    let g = terminal_adjoint_cloud(spec, &mu_n)?;

    let mut diag = ResidualDiagnostics {
        forward_residual: 0.0,
        backward_residual: 0.0,
        optimality_residual: 0.0,
        martingale_residual: 0.0,
        backward_mc_std: 0.0,
        martingale_mc_std: 1.0 / (m as f64).sqrt(),
    };
    let mut buf = Vec::new();
    for i in 0..big_n {
        let (t, h) = (partition.t(i), partition.h(i));
        let dw = solution.noise.step(i, &mut buf).to_vec();
        let eta = JointMeasure::from_parts(n, solution.x[i].clone(), k, solution.alpha[i].clone())?;
        let next = em_step_raw(&spec.dynamics.at(t), h, &eta, &dw, i)?;
        let gap: Vec<f64> = next.iter().zip(&solution.x[i + 1]).map(|(a, b)| a - b).collect();
        diag.forward_residual = diag.forward_residual.max(l2(&gap, n));

        let chi = JointMeasure::from_parts(n, solution.x[i].clone(), n, solution.y[i].clone())?;
        let z = &solution.z[i];
        let (f, _) = driver_cloud(spec, map, t, &chi, need_z.then_some(z.as_slice()), Some(&solution.alpha[i]))?;
        let y_next = if i + 1 == big_n { &g } else { &solution.y[i + 1] };
        let defect: Vec<f64> = (0..m * n).map(|j| y_next[j] - solution.y[i][j] + h * f[j]).collect();
        let proj = fit(basis, n, &solution.x[i], &defect, n, i)?;
        diag.backward_residual = diag.backward_residual.max(l2(&proj.predict_cloud(&solution.x[i]), n));
        let intercept_var: f64 = (0..n).map(|o| proj.se[o].powi(2)).sum();
        diag.backward_mc_std = diag.backward_mc_std.max(((p + 1) as f64 * intercept_var).sqrt());

        let mut net = defect.clone();
        for q in 0..m {
            for r in 0..n {
                for c in 0..d {
                    net[q * n + r] -= z[q * n * d + r * d + c] * dw[q * d + c];
                }
            }
        }
        for r in 0..n {
            let col: Vec<f64> = (0..m).map(|q| net[q * n + r]).collect();
            let raw: Vec<f64> = (0..m).map(|q| defect[q * n + r]).collect();
            for c in 0..d {
                let w: Vec<f64> = (0..m).map(|q| dw[q * d + c]).collect();
                diag.martingale_residual = diag.martingale_residual.max(scaled_covariance(&col, &raw, &w).abs());
            }
        }
        diag.optimality_residual = diag.optimality_residual.max(optimality_residual(spec, map, t, &chi)?);
    }
    Ok(diag)
}

/// A (state, adjoint, z) cloud; `z` rows are row-major `n × d` matrices.
#[derive(Clone, Debug)]
pub struct ProbeCloud {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// Worst violation of the monotonicity inequality of the forward-backward
/// coefficients over index-coupled pairs of clouds, together with the
/// terminal condition `E<g(X1) - g(X2), X1 - X2> >= 0`. A nonpositive result
/// means no violation.
pub fn monotonicity_probe(spec: &ProblemSpec, samples: &[(ProbeCloud, ProbeCloud)], t: f64) -> Result<f64> {
    let map = FeedbackMap::new(spec)?;
    monotonicity_probe_with(spec, &map, samples, t)
}

pub fn monotonicity_probe_with(
    spec: &ProblemSpec,
    map: &dyn Feedback,
    samples: &[(ProbeCloud, ProbeCloud)],
    t: f64,
) -> Result<f64> {
    let (n, k, d) = (spec.n(), spec.k(), spec.d());
    let lambda = spec.lambda();
    let c = spec.dynamics.at(t);
    let mut worst = f64::NEG_INFINITY;
    for (a, b) in samples {
        let m = a.x.len() / n;
        for cl in [a, b] {
            if cl.x.len() != m * n || cl.y.len() != m * n || cl.z.len() != m * n * d {
                return Err(MfcError::config("monotonicity probe: clouds differ in size or shape"));
            }
        }
        let eval = |cl: &ProbeCloud| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
            let chi = JointMeasure::from_parts(n, cl.x.clone(), n, cl.y.clone())?;
            let (f, alpha) = driver_cloud(spec, map, t, &chi, Some(&cl.z), None)?;
            let abar = row_mean(&alpha, k);
            let xbar = chi.first.mean().to_vec();
            let mut drift = vec![0.0; m * n];
            let mut sig = vec![0.0; m * n * d];
            for q in 0..m {
                c.drift(&cl.x[q * n..(q + 1) * n], &alpha[q * k..(q + 1) * k], &xbar, &abar, &mut drift[q * n..(q + 1) * n]);
                c.diffusion(&cl.x[q * n..(q + 1) * n], &xbar, &mut sig[q * n * d..(q + 1) * n * d]);
            }
            let g = terminal_adjoint_cloud(spec, &chi.first)?;
            Ok((drift, sig, f, alpha, g))
        };
        let (b1, s1, f1, a1, g1) = eval(a)?;
        let (b2, s2, f2, a2, g2) = eval(b)?;
        let inner = |u1: &[f64], u2: &[f64], v1: &[f64], v2: &[f64], w: usize| {
            tree_mean(m, |q| (0..w).map(|j| (u1[q * w + j] - u2[q * w + j]) * (v1[q * w + j] - v2[q * w + j])).sum())
        };
        let lhs = inner(&b1, &b2, &a.y, &b.y, n) + inner(&s1, &s2, &a.z, &b.z, n * d) - inner(&f1, &f2, &a.x, &b.x, n);
        let rhs = -2.0 * lambda * inner(&a1, &a2, &a1, &a2, k);
        let terminal = -inner(&g1, &g2, &a.x, &b.x, n);
        worst = worst.max(lhs - rhs).max(terminal);
    }
    Ok(if samples.is_empty() { 0.0 } else { worst })
}
