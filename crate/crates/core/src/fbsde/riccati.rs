//! Affine-ansatz ODE oracle for the scalar LQ family.
//!
//! With `Y = P (X - m) + Pi m + s`, `m = E[X]`, the coefficients solve
//!
//! ```text
//! P'  = -2 b1 P - sigma1^2 P - qx + (c + b2 P)^2 / kappa,          P(T)  = gx
//! Pi' = -2 A Pi - S^2 P - qx - qm + (B Pi + c)^2 / D,              Pi(T) = gx + gm
//! s'  = -A s + B (B Pi + c) s / D - Pi b0 - S P sigma0,            s(T)  = -gx target
//! ```
//!
//! where `kappa = q + qbar`, `D = q + qbar (1 - r)^2`, `B = b2 + gamma`,
//! `A = b1 + beta`, `S = sigma1 + sigma2`. The optimal control has mean
//! `-(B (Pi m + s) + c m) / D` and fluctuation gain `-(c + b2 P) / kappa`,
//! which closes linear ODEs for the state mean and variance and hence the value.

use serde::Serialize;

use crate::error::{MfcError, Result};
use crate::feedback::{lq_feedback, LqAt, LqCoefficients};
use crate::model::QuadraticTerminal;
use crate::sim::{AdjointField, EmpiricalMeasure};

const BLOWUP: f64 = 1e12;

#[derive(Clone, Debug, Serialize)]
pub struct RiccatiSolution {
    /// Dense time grid, `steps + 1` nodes.
    pub times: Vec<f64>,
    /// `P`, the coefficient of the state.
    pub state_coef: Vec<f64>,
    /// `Pi - P`, the coefficient of `E[X]` in `Y = P X + p E[X] + s`.
    pub mean_coef: Vec<f64>,
    pub constant: Vec<f64>,
    /// State mean and variance under the optimal control at every second node.
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub value: f64,
    #[serde(skip)]
    coeffs: LqCoefficients,
    #[serde(skip)]
    terminal: QuadraticTerminal,
}

fn backward_rhs(c: &LqAt, state: [f64; 3]) -> [f64; 3] {
    let [p, pi, s] = state;
    let kappa = c.q + c.qbar;
    let d = c.mean_denominator();
    let bb = c.b2 + c.gamma;
    let a = c.b1 + c.beta;
    let sg = c.sigma1 + c.sigma2;
    [
        -2.0 * c.b1 * p - c.sigma1 * c.sigma1 * p - c.qx + (c.c + c.b2 * p).powi(2) / kappa,
        -2.0 * a * pi - sg * sg * p - c.qx - c.qm + (bb * pi + c.c).powi(2) / d,
        -a * s + bb * (bb * pi + c.c) * s / d - pi * c.b0 - sg * p * c.sigma0,
    ]
}

/// Mean control and fluctuation gain.
fn control_moments(c: &LqAt, p: f64, pi: f64, s: f64, m: f64) -> (f64, f64) {
    let bb = c.b2 + c.gamma;
    let mean_a = -(bb * (pi * m + s) + c.c * m) / c.mean_denominator();
    let gain = -(c.c + c.b2 * p) / (c.q + c.qbar);
    (mean_a, gain)
}

fn forward_rhs(c: &LqAt, coef: [f64; 3], state: [f64; 3]) -> [f64; 3] {
    let [p, pi, s] = coef;
    let [m, v, _] = state;
    let (ea, k) = control_moments(c, p, pi, s, m);
    let sg = c.sigma1 + c.sigma2;
    let dm = c.b0 + (c.b1 + c.beta) * m + (c.b2 + c.gamma) * ea;
    let dv = 2.0 * (c.b1 + c.b2 * k) * v + (c.sigma0 + sg * m).powi(2) + c.sigma1 * c.sigma1 * v;
    let r1 = 1.0 - c.r;
    let ef = 0.5
        * (c.qx * (v + m * m)
            + c.qm * m * m
            + c.q * (ea * ea + k * k * v)
            + c.qbar * (r1 * r1 * ea * ea + k * k * v)
            + 2.0 * c.c * (m * ea + k * v));
    [dm, dv, ef]
}

fn axpy(a: [f64; 3], h: f64, b: [f64; 3]) -> [f64; 3] {
    [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]]
}

/// Integrates the coefficient ODEs backward and the moment ODEs forward with
/// the classical fourth-order Runge-Kutta method.
pub fn riccati_oracle_lq1d(
    coeffs: &LqCoefficients,
    terminal: &QuadraticTerminal,
    horizon: f64,
    initial_mean: f64,
    initial_variance: f64,
    ode_steps: usize,
) -> Result<RiccatiSolution> {
    if ode_steps < 2 || ode_steps % 2 != 0 {
        return Err(MfcError::config("Riccati oracle needs an even number of ODE steps"));
    }
    if !(horizon > 0.0) || !(initial_variance >= 0.0) || !initial_mean.is_finite() {
        return Err(MfcError::config("Riccati oracle needs T > 0 and finite initial moments"));
    }
    coeffs.check(horizon)?;
    let n = ode_steps;
    let dt = horizon / n as f64;
    let times: Vec<f64> = (0..=n).map(|j| horizon * (j as f64 / n as f64)).collect();
    let mut nodes = vec![[0.0; 3]; n + 1];
    nodes[n] = [terminal.gx, terminal.gx + terminal.gm, -terminal.gx * terminal.target];
    for j in (0..n).rev() {
        let t = times[j + 1];
        let y = nodes[j + 1];
        let h = -dt;
        let k1 = backward_rhs(&coeffs.at(t), y);
        let k2 = backward_rhs(&coeffs.at(t + 0.5 * h), axpy(y, 0.5 * h, k1));
        let k3 = backward_rhs(&coeffs.at(t + 0.5 * h), axpy(y, 0.5 * h, k2));
        let k4 = backward_rhs(&coeffs.at(times[j]), axpy(y, h, k3));
        let next = [0, 1, 2].map(|c| y[c] + h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]));
        if next.iter().any(|v| !(v.abs() <= BLOWUP)) {
            return Err(MfcError::NonConvergence {
                what: "Riccati backward integration (escape)".into(),
                iterations: n - j,
                residual: next.iter().fold(0.0f64, |a, v| a.max(v.abs())),
                history: vec![],
            });
        }
        nodes[j] = next;
    }

    let mut state = [initial_mean, initial_variance, 0.0];
    let mut mean = vec![initial_mean];
    let mut variance = vec![initial_variance];
    let h = 2.0 * dt;
    for j in (0..n).step_by(2) {
        let (t0, t1, t2) = (times[j], times[j + 1], times[j + 2]);
        let (c0, c1, c2) = (coeffs.at(t0), coeffs.at(t1), coeffs.at(t2));
        let k1 = forward_rhs(&c0, nodes[j], state);
        let k2 = forward_rhs(&c1, nodes[j + 1], axpy(state, 0.5 * h, k1));
        let k3 = forward_rhs(&c1, nodes[j + 1], axpy(state, 0.5 * h, k2));
        let k4 = forward_rhs(&c2, nodes[j + 2], axpy(state, h, k3));
        state = [0, 1, 2].map(|c| state[c] + h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]));
        mean.push(state[0]);
        variance.push(state[1]);
    }
    let (m, v, running) = (state[0], state[1], state[2]);
    let value = running + 0.5 * (terminal.gx * (v + (m - terminal.target).powi(2)) + terminal.gm * m * m);
    if !value.is_finite() {
        return Err(MfcError::NumericalInput("Riccati value is not finite".into()));
    }
    Ok(RiccatiSolution {
        times,
        state_coef: nodes.iter().map(|y| y[0]).collect(),
        mean_coef: nodes.iter().map(|y| y[1] - y[0]).collect(),
        constant: nodes.iter().map(|y| y[2]).collect(),
        mean,
        variance,
        value,
        coeffs: coeffs.clone(),
        terminal: terminal.clone(),
    })
}

impl RiccatiSolution {
    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// `(P, p, s)` at `t`, linearly interpolated between nodes.
    pub fn coefficients_at(&self, t: f64) -> (f64, f64, f64) {
        let n = self.times.len() - 1;
        let u = (t / self.horizon() * n as f64).clamp(0.0, n as f64);
        let j = (u.floor() as usize).min(n - 1);
        let w = u - j as f64;
        let lerp = |v: &[f64]| v[j] + w * (v[j + 1] - v[j]);
        (lerp(&self.state_coef), lerp(&self.mean_coef), lerp(&self.constant))
    }

    /// `P x + p xbar + s`
    pub fn adjoint_value(&self, t: f64, x: f64, mean_x: f64) -> f64 {
        let (p, pm, s) = self.coefficients_at(t);
        p * x + pm * mean_x + s
    }

    /// Closed-form optimal control given the state and the cloud mean.
    pub fn control(&self, t: f64, x: f64, mean_x: f64) -> Result<f64> {
        let y = self.adjoint_value(t, x, mean_x);
        let ybar = self.adjoint_value(t, mean_x, mean_x);
        lq_feedback(&self.coeffs, t, x, y, mean_x, ybar)
    }

    /// Largest defect of the coefficient ODEs, measured with Simpson's rule on
    /// consecutive node triples and scaled to a derivative.
    pub fn ode_residual(&self) -> f64 {
        let n = self.times.len() - 1;
        let dt = self.horizon() / n as f64;
        let node = |j: usize| [self.state_coef[j], self.state_coef[j] + self.mean_coef[j], self.constant[j]];
        let rhs = |j: usize| backward_rhs(&self.coeffs.at(self.times[j]), node(j));
        let mut worst = 0.0f64;
        for j in 1..n {
            let (f0, f1, f2) = (rhs(j - 1), rhs(j), rhs(j + 1));
            let (y0, y2) = (node(j - 1), node(j + 1));
            for c in 0..3 {
                let simpson = dt / 3.0 * (f0[c] + 4.0 * f1[c] + f2[c]);
                worst = worst.max(((y2[c] - y0[c]) - simpson).abs() / (2.0 * dt));
            }
        }
        worst
    }

    pub fn terminal(&self) -> &QuadraticTerminal {
        &self.terminal
    }

    pub fn coeffs(&self) -> &LqCoefficients {
        &self.coeffs
    }
}

impl AdjointField for RiccatiSolution {
    fn adjoint(&self, t: f64, states: &EmpiricalMeasure) -> Result<Vec<f64>> {
        if states.dim() != 1 {
            return Err(MfcError::config("Riccati field is scalar"));
        }
        let (p, pm, s) = self.coefficients_at(t);
        let shift = pm * states.mean()[0] + s;
        Ok(states.samples().iter().map(|x| p * x + shift).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time_fn::TimeFn;

    fn plain_terminal() -> QuadraticTerminal {
        QuadraticTerminal { gx: 1.0, ..Default::default() }
    }

    #[test]
    fn plain_lq_has_constant_unit_gain() {
        let sol = riccati_oracle_lq1d(&LqCoefficients::plain(), &plain_terminal(), 1.0, 0.0, 0.0, 10_000).unwrap();
        assert!(sol.state_coef.iter().all(|p| (p - 1.0).abs() < 1e-12));
        assert!(sol.mean_coef.iter().all(|p| p.abs() < 1e-12));
        assert!(sol.constant.iter().all(|s| s.abs() < 1e-12));
        assert!((sol.value - 0.5).abs() < 1e-10);
        assert!(sol.ode_residual() < 1e-8);
    }

    #[test]
    fn zero_costs_give_zero_field() {
        let c = LqCoefficients { q: TimeFn::Const(1.0), b2: TimeFn::Const(1.0), sigma0: TimeFn::Const(1.0), ..Default::default() };
        let sol = riccati_oracle_lq1d(&c, &QuadraticTerminal::default(), 1.0, 0.3, 0.1, 10_000).unwrap();
        assert!(sol.state_coef.iter().chain(&sol.mean_coef).chain(&sol.constant).all(|v| *v == 0.0));
        assert_eq!(sol.value, 0.0);
    }

    #[test]
    fn scalar_riccati_matches_closed_form() {
        // b = a, f = (x^2 + a^2)/2, g = 0: P' = P^2 - 1, P(T) = 0 gives P = tanh(T - t).
        let sol = riccati_oracle_lq1d(&LqCoefficients::plain(), &QuadraticTerminal::default(), 1.0, 0.0, 0.0, 10_000).unwrap();
        for (t, p) in sol.times.iter().zip(&sol.state_coef) {
            assert!((p - (1.0 - t).tanh()).abs() < 1e-12, "t = {t}");
        }
        // V = 1/2 int_0^1 P(t) dt for X_0 = 0, sigma = 1.
        assert!((sol.value - 0.5 * 1f64.cosh().ln()).abs() < 1e-10);
    }

    #[test]
    fn odd_step_count_rejected() {
        assert!(riccati_oracle_lq1d(&LqCoefficients::plain(), &plain_terminal(), 1.0, 0.0, 0.0, 11).is_err());
    }
}
