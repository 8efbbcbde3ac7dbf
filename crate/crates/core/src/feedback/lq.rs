use crate::error::{MfcError, Result};
use crate::model::{LinearDynamics, QuadraticCost, ScalarDynamics};
use crate::time_fn::TimeFn;

/// Scalar data of the one-dimensional LQ family.
///
/// Running cost `1/2 (qx x^2 + qm xbar^2 + q a^2 + qbar (a - r abar)^2 + 2 c x a)`,
/// drift `b0 + b1 x + b2 a + beta xbar + gamma abar`,
/// diffusion `sigma0 + sigma1 x + sigma2 xbar`.
#[derive(Clone, Debug)]
pub struct LqCoefficients {
    pub q: TimeFn<f64>,
    pub qbar: TimeFn<f64>,
    pub r: TimeFn<f64>,
    pub c: TimeFn<f64>,
    pub b2: TimeFn<f64>,
    pub gamma: TimeFn<f64>,
    pub beta: TimeFn<f64>,
    pub b1: TimeFn<f64>,
    pub b0: TimeFn<f64>,
    pub sigma0: TimeFn<f64>,
    pub sigma1: TimeFn<f64>,
    pub sigma2: TimeFn<f64>,
    pub qx: TimeFn<f64>,
    pub qm: TimeFn<f64>,
}

/// The coefficients frozen at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LqAt {
    pub q: f64,
    pub qbar: f64,
    pub r: f64,
    pub c: f64,
    pub b2: f64,
    pub gamma: f64,
    pub beta: f64,
    pub b1: f64,
    pub b0: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub qx: f64,
    pub qm: f64,
}

impl LqAt {
    /// `q + qbar (r - 1)^2`, the coefficient of the mean control in the averaged first-order condition.
    pub fn mean_denominator(&self) -> f64 {
        self.q + self.qbar * (self.r - 1.0).powi(2)
    }
}

impl Default for LqCoefficients {
    fn default() -> Self {
        let z = TimeFn::Const(0.0);
        Self {
            q: z.clone(),
            qbar: z.clone(),
            r: z.clone(),
            c: z.clone(),
            b2: z.clone(),
            gamma: z.clone(),
            beta: z.clone(),
            b1: z.clone(),
            b0: z.clone(),
            sigma0: z.clone(),
            sigma1: z.clone(),
            sigma2: z.clone(),
            qx: z.clone(),
            qm: z,
        }
    }
}

impl LqCoefficients {
    /// `dX = a dt + dW`, running cost `(x^2 + a^2)/2`.
    pub fn plain() -> Self {
        Self {
            q: TimeFn::Const(1.0),
            qx: TimeFn::Const(1.0),
            b2: TimeFn::Const(1.0),
            sigma0: TimeFn::Const(1.0),
            ..Default::default()
        }
    }

    pub fn at(&self, t: f64) -> LqAt {
        LqAt {
            q: self.q.at(t),
            qbar: self.qbar.at(t),
            r: self.r.at(t),
            c: self.c.at(t),
            b2: self.b2.at(t),
            gamma: self.gamma.at(t),
            beta: self.beta.at(t),
            b1: self.b1.at(t),
            b0: self.b0.at(t),
            sigma0: self.sigma0.at(t),
            sigma1: self.sigma1.at(t),
            sigma2: self.sigma2.at(t),
            qx: self.qx.at(t),
            qm: self.qm.at(t),
        }
    }

    /// Scans `[0, horizon]` on 1000 points for finiteness, `q > 0` and `qbar >= 0`.
    pub fn check(&self, horizon: f64) -> Result<()> {
        for j in 0..1000 {
            let t = horizon * j as f64 / 999.0;
            let c = self.at(t);
            let all = [
                c.q, c.qbar, c.r, c.c, c.b2, c.gamma, c.beta, c.b1, c.b0, c.sigma0, c.sigma1, c.sigma2, c.qx, c.qm,
            ];
            if all.iter().any(|v| !v.is_finite()) {
                return Err(MfcError::Invariant(format!("LQ coefficient not finite at t = {t}")));
            }
            if !(c.q > 0.0) {
                return Err(MfcError::Invariant(format!("LQ coefficient q = {} is not positive at t = {t}", c.q)));
            }
            if c.qbar < 0.0 {
                return Err(MfcError::Invariant(format!("LQ coefficient qbar = {} is negative at t = {t}", c.qbar)));
            }
        }
        Ok(())
    }

    pub fn dynamics(&self, horizon: f64) -> LinearDynamics {
        LinearDynamics::scalar(
            horizon,
            &ScalarDynamics {
                b0: self.b0.clone(),
                b1: self.b1.clone(),
                b2: self.b2.clone(),
                beta_x: self.beta.clone(),
                beta_a: self.gamma.clone(),
                sigma0: self.sigma0.clone(),
                sigma1: self.sigma1.clone(),
                sigma2: self.sigma2.clone(),
            },
        )
    }

    pub fn running_cost(&self) -> QuadraticCost {
        QuadraticCost {
            qx: self.qx.clone(),
            qm: self.qm.clone(),
            q: self.q.clone(),
            qbar: self.qbar.clone(),
            r: self.r.clone(),
            c: self.c.clone(),
            ..Default::default()
        }
    }
}

fn checked(c: &LqAt, t: f64) -> Result<f64> {
    let den = c.mean_denominator();
    if !(den > 0.0) || !(c.q + c.qbar > 0.0) {
        return Err(MfcError::Invariant(format!(
            "LQ feedback denominators not positive at t = {t} (q + qbar (r-1)^2 = {den})"
        )));
    }
    Ok(den)
}

/// The mean-coupling coefficients of the closed-form feedback.
pub fn lq_psi_zeta(coeffs: &LqCoefficients, t: f64) -> Result<(f64, f64)> {
    let c = coeffs.at(t);
    let den = checked(&c, t)?;
    let k = c.qbar * c.r * (c.r - 2.0) / den;
    Ok((c.c * k, (c.b2 + c.gamma) * k))
}

/// Closed-form minimizer of the LQ first-order condition.
pub fn lq_feedback(coeffs: &LqCoefficients, t: f64, x: f64, y: f64, mean_x: f64, mean_y: f64) -> Result<f64> {
    let c = coeffs.at(t);
    let (psi, zeta) = lq_psi_zeta(coeffs, t)?;
    Ok((-c.c * x - c.b2 * y + psi * mean_x + (-c.gamma + zeta) * mean_y) / (c.q + c.qbar))
}

/// Residual of the LQ first-order condition for one particle, given cloud means.
#[allow(clippy::too_many_arguments)]
pub fn lq_stationarity_residual(
    coeffs: &LqCoefficients,
    t: f64,
    x: f64,
    y: f64,
    alpha: f64,
    mean_y: f64,
    mean_alpha: f64,
) -> f64 {
    let c = coeffs.at(t);
    c.b2 * y + c.gamma * mean_y + (c.q + c.qbar) * alpha + c.qbar * c.r * (c.r - 2.0) * mean_alpha + c.c * x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_field() -> LqCoefficients {
        LqCoefficients { qbar: TimeFn::Const(1.0), r: TimeFn::Const(1.0), ..LqCoefficients::plain() }
    }

    #[test]
    fn psi_zeta_vanish_without_mean_coupling() {
        assert_eq!(lq_psi_zeta(&LqCoefficients::plain(), 0.3).unwrap(), (0.0, 0.0));
        let r2 = LqCoefficients { qbar: TimeFn::Const(1.0), r: TimeFn::Const(2.0), ..LqCoefficients::plain() };
        let (psi, zeta) = lq_psi_zeta(&r2, 0.0).unwrap();
        assert_eq!((psi, zeta), (0.0, 0.0));
    }

    #[test]
    fn psi_zeta_mean_field_case() {
        assert_eq!(lq_psi_zeta(&mean_field(), 0.0).unwrap(), (0.0, -1.0));
    }

    #[test]
    fn feedback_examples() {
        assert_eq!(lq_feedback(&LqCoefficients::plain(), 0.0, 0.4, 1.5, 0.0, 0.0).unwrap(), -1.5);
        assert_eq!(lq_feedback(&mean_field(), 0.0, 0.0, 1.0, 0.0, 1.0).unwrap(), -1.0);
        let only_q = LqCoefficients { q: TimeFn::Const(2.0), ..Default::default() };
        assert_eq!(lq_feedback(&only_q, 0.0, 3.0, 0.0, 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn feedback_solves_first_order_condition_on_a_cloud() {
        let c = LqCoefficients {
            q: TimeFn::Const(1.3),
            qbar: TimeFn::Const(0.7),
            r: TimeFn::Const(0.4),
            c: TimeFn::Const(0.25),
            gamma: TimeFn::Const(-0.6),
            b2: TimeFn::Const(0.9),
            qx: TimeFn::Const(1.0),
            ..Default::default()
        };
        let xs = [0.3, -1.2, 2.0, 0.7];
        let ys = [1.1, 0.4, -0.5, 2.2];
        let mx = xs.iter().sum::<f64>() / 4.0;
        let my = ys.iter().sum::<f64>() / 4.0;
        let alphas: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| lq_feedback(&c, 0.0, *x, *y, mx, my).unwrap()).collect();
        let ma = alphas.iter().sum::<f64>() / 4.0;
        for ((x, y), a) in xs.iter().zip(&ys).zip(&alphas) {
            assert!(lq_stationarity_residual(&c, 0.0, *x, *y, *a, my, ma).abs() <= 1e-12);
        }
    }

    #[test]
    fn nonpositive_q_rejected() {
        let bad = LqCoefficients { q: TimeFn::Const(0.0), ..Default::default() };
        assert!(matches!(lq_psi_zeta(&bad, 0.0), Err(MfcError::Invariant(_))));
        assert!(bad.check(1.0).is_err());
        assert!(LqCoefficients::plain().check(1.0).is_ok());
    }
}
