use std::sync::Arc;

use crate::sim::{EmpiricalMeasure, JointMeasure};
use crate::time_fn::TimeFn;

/// Running cost `f(t, x, a, eta)` with `eta` a cloud of (state, control) pairs.
///
/// Gradient methods overwrite `out`. The measure derivatives are kernels: for
/// a cloud of size `M`, moving sample `j` by `dx` changes `f` by
/// `<grad_mu(..)(x_j, a_j), dx> / M`.
pub trait RunningCost: Send + Sync {
    fn value(&self, t: f64, x: &[f64], a: &[f64], eta: &JointMeasure) -> f64;
    fn grad_x(&self, t: f64, x: &[f64], a: &[f64], eta: &JointMeasure, out: &mut [f64]);
    fn grad_a(&self, t: f64, x: &[f64], a: &[f64], eta: &JointMeasure, out: &mut [f64]);
    #[allow(clippy::too_many_arguments)]
    fn grad_mu(&self, t: f64, x: &[f64], a: &[f64], eta: &JointMeasure, xp: &[f64], ap: &[f64], out: &mut [f64]);
    #[allow(clippy::too_many_arguments)]
    fn grad_nu(&self, t: f64, x: &[f64], a: &[f64], eta: &JointMeasure, xp: &[f64], ap: &[f64], out: &mut [f64]);

    /// For every sample `i` of `eta`, the cloud averages
    /// `(1/M) sum_j grad_mu(t, x_j, a_j, eta)(x_i, a_i)` and the `grad_nu` analogue,
    /// returned row-major (`M × n`, `M × k`).
    ///
    /// The default is the O(M^2) double loop; implementations with moment
    /// structure should override it.
    fn averaged_measure_grads(&self, t: f64, eta: &JointMeasure) -> (Vec<f64>, Vec<f64>) {
        let (m, n, k) = (eta.len(), eta.first.dim(), eta.second.dim());
        let mut mu = vec![0.0; m * n];
        let mut nu = vec![0.0; m * k];
        let (mut gx, mut ga) = (vec![0.0; n], vec![0.0; k]);
        for i in 0..m {
            let (xi, ai) = (eta.first.sample(i), eta.second.sample(i));
            for j in 0..m {
                let (xj, aj) = (eta.first.sample(j), eta.second.sample(j));
                self.grad_mu(t, xj, aj, eta, xi, ai, &mut gx);
                self.grad_nu(t, xj, aj, eta, xi, ai, &mut ga);
                for (o, g) in mu[i * n..(i + 1) * n].iter_mut().zip(&gx) {
                    *o += g;
                }
                for (o, g) in nu[i * k..(i + 1) * k].iter_mut().zip(&ga) {
                    *o += g;
                }
            }
        }
        let inv = 1.0 / m as f64;
        mu.iter_mut().chain(nu.iter_mut()).for_each(|v| *v *= inv);
        (mu, nu)
    }

    /// Whether `f` depends on the law of the control at all.
    fn depends_on_control_law(&self) -> bool {
        true
    }

    /// Whether `f` depends on the law of the state at all.
    fn depends_on_state_law(&self) -> bool {
        true
    }

    /// Upper bound on the curvature of `a -> f` at time `t`, when known.
    fn curvature_bound(&self, _t: f64) -> Option<f64> {
        None
    }
}

/// Terminal cost `g(x, mu)`.
pub trait TerminalCost: Send + Sync {
    fn value(&self, x: &[f64], mu: &EmpiricalMeasure) -> f64;
    fn grad_x(&self, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]);
    fn grad_mu(&self, x: &[f64], mu: &EmpiricalMeasure, xp: &[f64], out: &mut [f64]);

    /// `(1/M) sum_j grad_mu(x_j, mu)(x_i)` for every sample `i`, row-major.
    fn averaged_grad_mu(&self, mu: &EmpiricalMeasure) -> Vec<f64> {
        let (m, n) = (mu.len(), mu.dim());
        let mut out = vec![0.0; m * n];
        let mut g = vec![0.0; n];
        for i in 0..m {
            for j in 0..m {
                self.grad_mu(mu.sample(j), mu, mu.sample(i), &mut g);
                for (o, v) in out[i * n..(i + 1) * n].iter_mut().zip(&g) {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        out
    }

    fn depends_on_law(&self) -> bool {
        true
    }
}

/// Running and terminal costs together with their convexity moduli.
#[derive(Clone)]
pub struct CostModel {
    pub running: Arc<dyn RunningCost>,
    pub terminal: Arc<dyn TerminalCost>,
    /// Strong convexity modulus in the control.
    pub lambda1: f64,
    /// Strong convexity modulus in the law of the control.
    pub lambda2: f64,
}

impl std::fmt::Debug for CostModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CostModel")
            .field("lambda1", &self.lambda1)
            .field("lambda2", &self.lambda2)
            .finish_non_exhaustive()
    }
}

fn log_cosh(a: f64) -> f64 {
    let b = a.abs();
    b + (-2.0 * b).exp().ln_1p() - std::f64::consts::LN_2
}

/// The quadratic family used by the built-in problems:
///
/// `f = qx/2 |x - x_target|^2 + qm/2 |xbar|^2 + q/2 |a|^2 + qbar/2 |a - r abar|^2
///      + c <x, a> + soft * sum_k log cosh(a_k)`
///
/// The cross term pairs the first `min(n, k)` coordinates.
#[derive(Clone, Debug)]
pub struct QuadraticCost {
    pub qx: TimeFn<f64>,
    pub qm: TimeFn<f64>,
    pub q: TimeFn<f64>,
    pub qbar: TimeFn<f64>,
    pub r: TimeFn<f64>,
    pub c: TimeFn<f64>,
    pub soft: TimeFn<f64>,
    pub x_target: TimeFn<f64>,
}

impl Default for QuadraticCost {
    fn default() -> Self {
        let z = TimeFn::Const(0.0);
        Self {
            qx: z.clone(),
            qm: z.clone(),
            q: z.clone(),
            qbar: z.clone(),
            r: z.clone(),
            c: z.clone(),
            soft: z.clone(),
            x_target: z,
        }
    }
}

struct QuadAt {
    qx: f64,
    qm: f64,
    q: f64,
    qbar: f64,
    r: f64,
    c: f64,
    soft: f64,
    xt: f64,
}

impl QuadraticCost {
    fn at(&self, t: f64) -> QuadAt {
        QuadAt {
            qx: self.qx.at(t),
            qm: self.qm.at(t),
            q: self.q.at(t),
            qbar: self.qbar.at(t),
            r: self.r.at(t),
            c: self.c.at(t),
            soft: self.soft.at(t),
            xt: self.x_target.at(t),
        }
    }

    /// Control-convexity modulus `min_t (q - c^2/qx) / 2` over a 1000-point scan of `[0, horizon]`.
    pub fn strong_convexity(&self, horizon: f64) -> f64 {
        let mut lam = f64::INFINITY;
        for j in 0..1000 {
            let p = self.at(horizon * j as f64 / 999.0);
            let v = if p.c == 0.0 {
                p.q
            } else if p.qx > 0.0 {
                p.q - p.c * p.c / p.qx
            } else {
                0.0
            };
            lam = lam.min(0.5 * v);
        }
        lam.max(0.0)
    }
}

impl RunningCost for QuadraticCost {
    fn value(&self, t: f64, x: &[f64], a: &[f64], eta: &JointMeasure) -> f64 {
        let p = self.at(t);
        let xbar = eta.first.mean();
        let abar = eta.second.mean();
        let mut v = 0.0;
        for xi in x {
            v += 0.5 * p.qx * (xi - p.xt) * (xi - p.xt);
        }
        if p.qm != 0.0 {
            v += 0.5 * p.qm * xbar.iter().map(|m| m * m).sum::<f64>();
        }
        for (ai, mi) in a.iter().zip(abar) {
            let dev = ai - p.r * mi;
            v += 0.5 * p.q * ai * ai + 0.5 * p.qbar * dev * dev;
            if p.soft != 0.0 {
                v += p.soft * log_cosh(*ai);
            }
        }
        for (xi, ai) in x.iter().zip(a) {
            v += p.c * xi * ai;
        }
        v
    }

    fn grad_x(&self, t: f64, x: &[f64], a: &[f64], _eta: &JointMeasure, out: &mut [f64]) {
        let p = self.at(t);
        for (i, o) in out.iter_mut().enumerate() {
            *o = p.qx * (x[i] - p.xt) + if i < a.len() { p.c * a[i] } else { 0.0 };
        }
    }

    fn grad_a(&self, t: f64, x: &[f64], a: &[f64], eta: &JointMeasure, out: &mut [f64]) {
        let p = self.at(t);
        let abar = eta.second.mean();
        for (i, o) in out.iter_mut().enumerate() {
            *o = p.q * a[i] + p.qbar * (a[i] - p.r * abar[i]) + if i < x.len() { p.c * x[i] } else { 0.0 };
            if p.soft != 0.0 {
                *o += p.soft * a[i].tanh();
            }
        }
    }

    fn grad_mu(&self, t: f64, _x: &[f64], _a: &[f64], eta: &JointMeasure, _xp: &[f64], _ap: &[f64], out: &mut [f64]) {
        let qm = self.qm.at(t);
        for (o, m) in out.iter_mut().zip(eta.first.mean()) {
            *o = qm * m;
        }
    }

    fn grad_nu(&self, t: f64, _x: &[f64], a: &[f64], eta: &JointMeasure, _xp: &[f64], _ap: &[f64], out: &mut [f64]) {
        let (qbar, r) = (self.qbar.at(t), self.r.at(t));
        for ((o, ai), m) in out.iter_mut().zip(a).zip(eta.second.mean()) {
            *o = -qbar * r * (ai - r * m);
        }
    }

    fn averaged_measure_grads(&self, t: f64, eta: &JointMeasure) -> (Vec<f64>, Vec<f64>) {
        let p = self.at(t);
        let (m, n, k) = (eta.len(), eta.first.dim(), eta.second.dim());
        let mu_row: Vec<f64> = eta.first.mean().iter().map(|v| p.qm * v).collect();
        let nu_row: Vec<f64> = eta
            .second
            .mean()
            .iter()
            .map(|v| -p.qbar * p.r * (1.0 - p.r) * v)
            .collect();
        let mut mu = Vec::with_capacity(m * n);
        let mut nu = Vec::with_capacity(m * k);
        for _ in 0..m {
            mu.extend_from_slice(&mu_row);
            nu.extend_from_slice(&nu_row);
        }
        (mu, nu)
    }

    fn depends_on_control_law(&self) -> bool {
        !matches!((&self.qbar, &self.r), (TimeFn::Const(q), _) if *q == 0.0)
            && !matches!(&self.r, TimeFn::Const(r) if *r == 0.0)
    }

    fn depends_on_state_law(&self) -> bool {
        !matches!(&self.qm, TimeFn::Const(q) if *q == 0.0)
    }

    fn curvature_bound(&self, t: f64) -> Option<f64> {
        let p = self.at(t);
        Some(p.q + p.qbar + p.soft.abs())
    }
}

/// `g = gx/2 |x - target|^2 + gm/2 |xbar|^2`
#[derive(Clone, Debug, Default)]
pub struct QuadraticTerminal {
    pub gx: f64,
    pub gm: f64,
    pub target: f64,
}

impl TerminalCost for QuadraticTerminal {
    fn value(&self, x: &[f64], mu: &EmpiricalMeasure) -> f64 {
        let mut v: f64 = x.iter().map(|xi| 0.5 * self.gx * (xi - self.target).powi(2)).sum();
        if self.gm != 0.0 {
            v += 0.5 * self.gm * mu.mean().iter().map(|m| m * m).sum::<f64>();
        }
        v
    }

    fn grad_x(&self, x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.gx * (xi - self.target);
        }
    }

    fn grad_mu(&self, _x: &[f64], mu: &EmpiricalMeasure, _xp: &[f64], out: &mut [f64]) {
        for (o, m) in out.iter_mut().zip(mu.mean()) {
            *o = self.gm * m;
        }
    }

    fn averaged_grad_mu(&self, mu: &EmpiricalMeasure) -> Vec<f64> {
        let row: Vec<f64> = mu.mean().iter().map(|m| self.gm * m).collect();
        row.repeat(mu.len())
    }

    fn depends_on_law(&self) -> bool {
        self.gm != 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> JointMeasure {
        JointMeasure::from_parts(1, vec![0.2, -0.4, 1.1], 1, vec![0.5, 0.9, -0.3]).unwrap()
    }

    fn rich() -> QuadraticCost {
        QuadraticCost {
            qx: TimeFn::Const(1.2),
            qm: TimeFn::Const(0.4),
            q: TimeFn::Const(0.8),
            qbar: TimeFn::Const(0.6),
            r: TimeFn::Const(0.7),
            c: TimeFn::Const(0.3),
            soft: TimeFn::Const(0.5),
            x_target: TimeFn::Const(0.1),
        }
    }

    #[test]
    fn averaged_grads_match_brute_force() {
        struct Plain(QuadraticCost);
        impl RunningCost for Plain {
            fn value(&self, t: f64, x: &[f64], a: &[f64], e: &JointMeasure) -> f64 {
                self.0.value(t, x, a, e)
            }
            fn grad_x(&self, t: f64, x: &[f64], a: &[f64], e: &JointMeasure, o: &mut [f64]) {
                self.0.grad_x(t, x, a, e, o)
            }
            fn grad_a(&self, t: f64, x: &[f64], a: &[f64], e: &JointMeasure, o: &mut [f64]) {
                self.0.grad_a(t, x, a, e, o)
            }
            fn grad_mu(&self, t: f64, x: &[f64], a: &[f64], e: &JointMeasure, xp: &[f64], ap: &[f64], o: &mut [f64]) {
                self.0.grad_mu(t, x, a, e, xp, ap, o)
            }
            fn grad_nu(&self, t: f64, x: &[f64], a: &[f64], e: &JointMeasure, xp: &[f64], ap: &[f64], o: &mut [f64]) {
                self.0.grad_nu(t, x, a, e, xp, ap, o)
            }
        }
        let eta = cloud();
        let (mu1, nu1) = rich().averaged_measure_grads(0.0, &eta);
        let (mu2, nu2) = Plain(rich()).averaged_measure_grads(0.0, &eta);
        for (a, b) in mu1.iter().zip(&mu2).chain(nu1.iter().zip(&nu2)) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn measure_kernel_matches_finite_difference_of_sample() {
        let f = rich();
        let eta = cloud();
        let (x, a) = ([0.3], [0.2]);
        let eps = 1e-6;
        let j = 1;
        let shifted = |dx: f64, da: f64| {
            let mut xs = eta.first.samples().to_vec();
            let mut as_ = eta.second.samples().to_vec();
            xs[j] += dx;
            as_[j] += da;
            JointMeasure::from_parts(1, xs, 1, as_).unwrap()
        };
        let fd_x = (f.value(0.0, &x, &a, &shifted(eps, 0.0)) - f.value(0.0, &x, &a, &shifted(-eps, 0.0))) / (2.0 * eps);
        let fd_a = (f.value(0.0, &x, &a, &shifted(0.0, eps)) - f.value(0.0, &x, &a, &shifted(0.0, -eps))) / (2.0 * eps);
        let (mut gm, mut gn) = ([0.0], [0.0]);
        f.grad_mu(0.0, &x, &a, &eta, eta.first.sample(j), eta.second.sample(j), &mut gm);
        f.grad_nu(0.0, &x, &a, &eta, eta.first.sample(j), eta.second.sample(j), &mut gn);
        assert!((fd_x - gm[0] / 3.0).abs() < 1e-8);
        assert!((fd_a - gn[0] / 3.0).abs() < 1e-8);
    }

    #[test]
    fn convexity_modulus_accounts_for_cross_term() {
        let f = rich();
        assert!((f.strong_convexity(1.0) - 0.5 * (0.8 - 0.09 / 1.2)).abs() < 1e-15);
        let plain = QuadraticCost { q: TimeFn::Const(1.0), ..Default::default() };
        assert_eq!(plain.strong_convexity(1.0), 0.5);
    }

    #[test]
    fn law_dependence_flags() {
        assert!(!QuadraticCost::default().depends_on_control_law());
        assert!(rich().depends_on_control_law());
        assert!(rich().depends_on_state_law());
    }
}
