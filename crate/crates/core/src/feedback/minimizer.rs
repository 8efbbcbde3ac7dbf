use crate::error::{MfcError, Result};
use crate::model::ActionSet;

#[derive(Clone, Debug)]
pub struct InnerResult {
    pub point: Vec<f64>,
    /// Norm of the projected-gradient mapping at `point`.
    pub residual: f64,
    /// Strong-convexity bound on the objective gap, `residual^2 / (2 lambda)`.
    pub gap_bound: f64,
    pub iterations: usize,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Projected gradient descent for a `lambda`-strongly convex, `curvature`-smooth
/// objective over `action`, given only its gradient.
///
/// Barzilai-Borwein steps are tried first and kept when they reduce the
/// gradient-mapping norm; otherwise the step `1/curvature` is used. Stops when
/// the mapping norm at step `1/curvature` is at most `tol`.
pub fn projected_gradient<G>(
    action: &ActionSet,
    start: &[f64],
    mut grad: G,
    curvature: f64,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<InnerResult>
where
    G: FnMut(&[f64], &mut [f64]),
{
    let k = start.len();
    let s_fix = 1.0 / curvature.max(1e-300);
    let s_max = 1.0 / lambda.max(1e-12 * curvature).max(1e-300);
    let mut x = start.to_vec();
    action.project(&mut x);
    let mut g = vec![0.0; k];
    grad(&x, &mut g);

    let mapping = |x: &[f64], g: &[f64]| {
        let mut p: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - s_fix * gi).collect();
        action.project(&mut p);
        dist(x, &p) / s_fix
    };

    let mut r = mapping(&x, &g);
    let mut bb: Option<f64> = None;
    let (mut xt, mut gt) = (vec![0.0; k], vec![0.0; k]);
    for it in 0..max_iters {
        if r <= tol {
            return Ok(InnerResult { point: x, residual: r, gap_bound: r * r / (2.0 * lambda), iterations: it });
        }
        let mut tried_bb = false;
        let step = match bb {
            Some(s) if s > s_fix => {
                tried_bb = true;
                s.min(s_max)
            }
            _ => s_fix,
        };
        let mut take = |s: f64, xt: &mut Vec<f64>, gt: &mut Vec<f64>| {
            for i in 0..k {
                xt[i] = x[i] - s * g[i];
            }
            action.project(xt);
            grad(xt, gt);
        };
        take(step, &mut xt, &mut gt);
        let mut rt = mapping(&xt, &gt);
        if tried_bb && !(rt < r) {
            take(s_fix, &mut xt, &mut gt);
            rt = mapping(&xt, &gt);
        }
        let (mut sxx, mut sxg) = (0.0, 0.0);
        for i in 0..k {
            let dx = xt[i] - x[i];
            sxx += dx * dx;
            sxg += dx * (gt[i] - g[i]);
        }
        bb = (sxg > 0.0 && sxx > 0.0).then(|| sxx / sxg);
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        if !rt.is_finite() {
            return Err(MfcError::NumericalInput("inner minimizer produced a non-finite gradient".into()));
        }
        r = rt;
    }
    if r <= tol {
        return Ok(InnerResult { point: x, residual: r, gap_bound: r * r / (2.0 * lambda), iterations: max_iters });
    }
    Err(MfcError::NonConvergence {
        what: "inner projected gradient".into(),
        iterations: max_iters,
        residual: r,
        history: vec![r],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_quadratic() {
        let a = ActionSet::full(2);
        let res = projected_gradient(
            &a,
            &[0.0, 0.0],
            |x, g| {
                g[0] = 3.0 * (x[0] - 1.0);
                g[1] = 0.5 * (x[1] + 2.0);
            },
            3.0,
            0.5,
            1e-12,
            500,
        )
        .unwrap();
        assert!((res.point[0] - 1.0).abs() < 1e-12 && (res.point[1] + 2.0).abs() < 1e-11);
    }

    #[test]
    fn active_bound() {
        let a = ActionSet::boxed(vec![0.0], vec![f64::INFINITY]).unwrap();
        let res = projected_gradient(&a, &[5.0], |x, g| g[0] = x[0] + 1.0, 1.0, 1.0, 1e-12, 100).unwrap();
        assert_eq!(res.point, vec![0.0]);
        assert_eq!(res.residual, 0.0);
    }

    #[test]
    fn reports_nonconvergence() {
        let a = ActionSet::full(2);
        let grad = |x: &[f64], g: &mut [f64]| {
            g[0] = x[0];
            g[1] = 100.0 * x[1];
        };
        let err = projected_gradient(&a, &[100.0, 100.0], grad, 100.0, 1.0, 1e-14, 1).unwrap_err();
        assert!(matches!(err, MfcError::NonConvergence { .. }));
    }
}
