//! Named problem instances.

use std::sync::Arc;

use crate::error::{MfcError, Result};
use crate::feedback::{FeedbackKind, LqCoefficients};
use crate::model::{
    ActionSet, CostModel, InitialLaw, LinearDynamics, LqData, ProblemKind, ProblemSpec, QuadraticCost,
    QuadraticTerminal, ScalarDynamics,
};
use crate::time_fn::TimeFn;

pub const BUILTIN_NAMES: [&str; 4] = ["lq1d", "lq1d-rough", "example1", "example2"];

/// Problem with a quadratic running cost; `lambda1` is derived from the cost.
#[allow(clippy::too_many_arguments)]
pub fn quadratic_problem(
    name: &str,
    kind: ProblemKind,
    dynamics: LinearDynamics,
    running: QuadraticCost,
    terminal: QuadraticTerminal,
    action: ActionSet,
    initial_law: InitialLaw,
    feedback: Option<FeedbackKind>,
) -> ProblemSpec {
    let lambda1 = running.strong_convexity(dynamics.horizon);
    ProblemSpec {
        name: name.to_string(),
        kind,
        dynamics,
        cost: CostModel { running: Arc::new(running), terminal: Arc::new(terminal), lambda1, lambda2: 0.0 },
        action,
        initial_law,
        feedback,
        lq: None,
    }
}

/// One-dimensional LQ problem with closed-form feedback.
pub fn lq1d(coeffs: LqCoefficients, terminal: QuadraticTerminal, horizon: f64, initial_law: InitialLaw) -> ProblemSpec {
    let mut spec = quadratic_problem(
        "lq1d",
        ProblemKind::Lq1d,
        coeffs.dynamics(horizon),
        coeffs.running_cost(),
        terminal.clone(),
        ActionSet::full(1),
        initial_law,
        None,
    );
    spec.lq = Some(LqData { coeffs, terminal });
    spec
}

/// `dX = a dt + dW`, `f = (x^2 + a^2)/2`, `g = x^2/2`, `T = 1`, `X_0 = 0`.
pub fn plain_lq() -> ProblemSpec {
    lq1d(
        LqCoefficients::plain(),
        QuadraticTerminal { gx: 1.0, ..Default::default() },
        1.0,
        InitialLaw::Dirac(vec![0.0]),
    )
}

/// Plain LQ with the control-mean penalty `qbar = 1`, `r = 1`.
pub fn mean_field_lq() -> ProblemSpec {
    let coeffs = LqCoefficients { qbar: TimeFn::Const(1.0), r: TimeFn::Const(1.0), ..LqCoefficients::plain() };
    lq1d(coeffs, QuadraticTerminal { gx: 1.0, ..Default::default() }, 1.0, InitialLaw::Dirac(vec![0.0]))
}

/// Truncated dyadic Weierstrass sum `sum_{j<=12} 2^{-j/2} cos(2^j pi t)`,
/// 1/2-Hölder down to scale `2^-12` and in `[-3.42, 3.42]`.
pub fn weierstrass_half(t: f64) -> f64 {
    (0..=12).map(|j| 2f64.powf(-0.5 * j as f64) * (2f64.powi(j) * std::f64::consts::PI * t).cos()).sum()
}

/// Plain LQ whose state-cost weight `2 + w(t)/2` is only 1/2-Hölder in time,
/// with `w` from [`weierstrass_half`]. Left-point quadrature of the running
/// cost then carries an error of order one half.
pub fn rough_lq() -> ProblemSpec {
    let coeffs = LqCoefficients { qx: TimeFn::func(|t| 2.0 + 0.5 * weierstrass_half(t)), ..LqCoefficients::plain() };
    let mut spec =
        lq1d(coeffs, QuadraticTerminal { gx: 1.0, ..Default::default() }, 1.0, InitialLaw::Dirac(vec![0.0]));
    spec.name = "lq1d-rough".into();
    spec
}

fn k(v: f64) -> TimeFn<f64> {
    TimeFn::Const(v)
}

/// Scalar problem with a box action set, state-mean and control-mean drift,
/// multiplicative noise and a smooth non-quadratic control cost that does not
/// depend on the control law; uses the per-particle modified-Hamiltonian feedback.
pub fn example1() -> ProblemSpec {
    let dynamics = LinearDynamics::scalar(
        1.0,
        &ScalarDynamics {
            b0: k(0.2),
            b1: k(-0.5),
            b2: k(1.0),
            beta_x: k(0.1),
            beta_a: k(0.3),
            sigma0: k(0.5),
            sigma1: k(0.1),
            sigma2: k(0.0),
        },
    );
    let running = QuadraticCost {
        qx: k(1.0),
        qm: k(0.5),
        q: k(1.0),
        c: k(0.2),
        soft: k(0.5),
        x_target: k(0.3),
        ..Default::default()
    };
    quadratic_problem(
        "example1",
        ProblemKind::Example1,
        dynamics,
        running,
        QuadraticTerminal { gx: 1.0, gm: 0.5, target: 0.0 },
        ActionSet::boxed(vec![-1.5], vec![1.5]).expect("valid box"),
        InitialLaw::Gaussian { mean: vec![0.2], std: vec![0.3] },
        None,
    )
}

/// Scalar problem where the control enters the drift only through its mean
/// and the cost splits into state and control parts; the optimal control is
/// deterministic.
pub fn example2() -> ProblemSpec {
    let dynamics = LinearDynamics::scalar(
        1.0,
        &ScalarDynamics {
            b0: k(0.1),
            b1: k(-0.3),
            b2: k(0.0),
            beta_x: k(0.2),
            beta_a: k(1.0),
            sigma0: k(0.4),
            sigma1: k(0.0),
            sigma2: k(0.1),
        },
    );
    let running = QuadraticCost {
        qx: k(1.0),
        qm: k(0.3),
        q: k(1.0),
        qbar: k(0.5),
        r: k(0.5),
        soft: k(0.3),
        ..Default::default()
    };
    quadratic_problem(
        "example2",
        ProblemKind::Example2,
        dynamics,
        running,
        QuadraticTerminal { gx: 1.0, gm: 0.2, target: 0.0 },
        ActionSet::full(1),
        InitialLaw::Gaussian { mean: vec![0.5], std: vec![0.2] },
        None,
    )
}

/// Zero dynamics with running cost `q/2 |a|^2` only.
pub fn null_problem(q: f64) -> ProblemSpec {
    quadratic_problem(
        "null",
        ProblemKind::Custom,
        LinearDynamics::zero(1, 1, 1, 1.0),
        QuadraticCost { q: k(q), ..Default::default() },
        QuadraticTerminal::default(),
        ActionSet::full(1),
        InitialLaw::Dirac(vec![0.0]),
        Some(FeedbackKind::ModifiedHamiltonian),
    )
}

pub fn by_name(name: &str) -> Result<ProblemSpec> {
    match name {
        "lq1d" => Ok(plain_lq()),
        "lq1d-rough" => Ok(rough_lq()),
        "example1" => Ok(example1()),
        "example2" => Ok(example2()),
        _ => Err(MfcError::config(format!(
            "unknown built-in problem '{name}' (known: {})",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_well_formed() {
        for name in BUILTIN_NAMES {
            let spec = by_name(name).unwrap();
            spec.check().unwrap();
            assert!(spec.lambda() > 0.0, "{name}");
        }
        assert!(by_name("nope").is_err());
    }

    #[test]
    fn example1_modulus_includes_cross_term() {
        assert!((example1().cost.lambda1 - 0.48).abs() < 1e-12);
    }
}
