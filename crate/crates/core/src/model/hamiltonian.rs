use crate::error::{ensure_finite, MfcError, Result};
use crate::model::{frobenius_row_major, ProblemSpec};
use crate::sim::{EmpiricalMeasure, JointMeasure};

fn check_point(spec: &ProblemSpec, x: &[f64], a: &[f64], eta: &JointMeasure, y: &[f64]) -> Result<()> {
    let (n, k) = (spec.n(), spec.k());
    if x.len() != n || a.len() != k || y.len() != n {
        return Err(MfcError::config(format!(
            "point dimensions (x {}, a {}, y {}) do not match (n {n}, k {k})",
            x.len(),
            a.len(),
            y.len()
        )));
    }
    if eta.is_empty() || eta.first.dim() != n || eta.second.dim() != k {
        return Err(MfcError::config("measure argument has the wrong dimensions or is empty"));
    }
    ensure_finite(x, "x")?;
    ensure_finite(a, "a")?;
    ensure_finite(y, "y")
}

/// `<b(t, x, a, eta), y> + f(t, x, a, eta)`
pub fn eval_reduced_hamiltonian(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    a: &[f64],
    eta: &JointMeasure,
    y: &[f64],
) -> Result<f64> {
    check_point(spec, x, a, eta, y)?;
    let c = spec.dynamics.at(t);
    let mut b = vec![0.0; spec.n()];
    c.drift(x, a, eta.first.mean(), eta.second.mean(), &mut b);
    let lin: f64 = b.iter().zip(y).map(|(u, v)| u * v).sum();
    Ok(lin + spec.cost.running.value(t, x, a, eta))
}

/// Frobenius pairing `<sigma(t, x, state marginal of eta), z>` with `z` row-major `n × d`.
pub fn diffusion_pairing(spec: &ProblemSpec, t: f64, x: &[f64], eta: &JointMeasure, z: &[f64]) -> Result<f64> {
    let (n, d) = (spec.n(), spec.d());
    if z.len() != n * d {
        return Err(MfcError::config(format!("z has {} entries, expected {}", z.len(), n * d)));
    }
    ensure_finite(z, "z")?;
    let c = spec.dynamics.at(t);
    let mut s = vec![0.0; n * d];
    c.diffusion(x, eta.first.mean(), &mut s);
    let sm = nalgebra::DMatrix::from_row_slice(n, d, &s);
    Ok(frobenius_row_major(&sm, z))
}

/// Full Hamiltonian: reduced Hamiltonian plus the diffusion pairing.
#[allow(clippy::too_many_arguments)]
pub fn eval_hamiltonian(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    a: &[f64],
    eta: &JointMeasure,
    y: &[f64],
    z: &[f64],
) -> Result<f64> {
    let reduced = eval_reduced_hamiltonian(spec, t, x, a, eta, y)?;
    Ok(reduced + diffusion_pairing(spec, t, x, eta, z)?)
}

/// `grad_x g(x, mu) + (1/M) sum_j grad_mu g(x_j, mu)(x)`.
pub fn terminal_adjoint(spec: &ProblemSpec, x: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
    let n = spec.n();
    if mu.is_empty() || mu.dim() != n || x.len() != n {
        return Err(MfcError::config("terminal adjoint: dimension mismatch or empty measure"));
    }
    let g = &spec.cost.terminal;
    let mut out = vec![0.0; n];
    g.grad_x(x, mu, &mut out);
    let mut acc = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for j in 0..mu.len() {
        g.grad_mu(mu.sample(j), mu, x, &mut tmp);
        for (a, v) in acc.iter_mut().zip(&tmp) {
            *a += v;
        }
    }
    for (o, a) in out.iter_mut().zip(&acc) {
        *o += a / mu.len() as f64;
    }
    ensure_finite(&out, "terminal adjoint")?;
    Ok(out)
}

/// `terminal_adjoint` at every sample of `mu`, row-major, in O(M) for costs
/// that override the averaged measure gradient.
pub fn terminal_adjoint_cloud(spec: &ProblemSpec, mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
    let n = spec.n();
    let g = &spec.cost.terminal;
    let mut out = g.averaged_grad_mu(mu);
    let mut tmp = vec![0.0; n];
    for (i, row) in out.chunks_mut(n).enumerate() {
        g.grad_x(mu.sample(i), mu, &mut tmp);
        for (o, v) in row.iter_mut().zip(&tmp) {
            *o += v;
        }
    }
    ensure_finite(&out, "terminal adjoint")?;
    Ok(out)
}
