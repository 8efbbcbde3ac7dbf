//! Regression-based adjoint BSDE along a given control, used as a cross-check
//! of the discrete adjoint.

use rayon::prelude::*;

use crate::error::{MfcError, Result};
use crate::fbsde::{fit, Basis, LinearFit};
use crate::model::{mat_tr_vec_add, terminal_adjoint_cloud, Partition, ProblemSpec};
use crate::reduce::{row_mean, tree_sum_vec};
use crate::sim::{simulate_fine, BrownianStore, ControlPath, ControlSource, Increments, JointMeasure, Trajectory};

#[derive(Clone, Debug)]
pub struct AdjointPaths {
    pub trajectory: Trajectory,
    /// `N + 1` arrays, each `M × n`.
    pub y: Vec<Vec<f64>>,
    /// `N` arrays, each `M × (n d)` row-major.
    pub z: Vec<Vec<f64>>,
    /// Fit of `Y` on the state at every node before the last.
    pub fits: Vec<LinearFit>,
}

/// Explicit backward regression scheme for the adjoint equation along the
/// flow of `control` on `fine` (the control may live on a coarser grid).
/// `Y` and `Z` are regressed on the current state.
pub fn continuous_adjoint_simulate(
    spec: &ProblemSpec,
    fine: &Partition,
    control: &ControlPath,
    m: usize,
    store: &BrownianStore,
    basis: Basis,
) -> Result<AdjointPaths> {
    let (n, k, d) = (spec.n(), spec.k(), spec.d());
    let traj = simulate_fine(spec, fine, ControlSource::Path(control), m, store)?;
    let noise = Increments::block(store, fine, m)?;
    let steps = fine.intervals();
    let f = &spec.cost.running;
    let mut y = vec![Vec::new(); steps + 1];
    let mut z = vec![Vec::new(); steps];
    let mut fits = vec![LinearFit::zero(basis, n, n); steps];
    y[steps] = terminal_adjoint_cloud(spec, &traj.state_cloud(steps)?)?;
    let mut buf = Vec::new();
    for i in (0..steps).rev() {
        let (t, h) = (fine.t(i), fine.h(i));
        let c = spec.dynamics.at(t);
        let xs = &traj.states[i];
        let yn = &y[i + 1];
        let dw = noise.step(i, &mut buf);
        if dw.len() != m * d {
            return Err(MfcError::config("noise shape mismatch"));
        }

        let nd = n * d;
        let mut zt = vec![0.0; m * nd];
        zt.par_chunks_mut(nd).enumerate().with_min_len(256).for_each(|(p, o)| {
            for r in 0..n {
                for col in 0..d {
                    o[r * d + col] = yn[p * n + r] * dw[p * d + col] / h;
                }
            }
        });
        let zfit = fit(basis, n, xs, &zt, nd, i)?;
        let zi = zfit.predict_cloud(xs);

        let eta = JointMeasure::from_parts(n, xs.clone(), k, traj.controls[i].clone())?;
        let (mu_avg, _) = f.averaged_measure_grads(t, &eta);
        let ybar = row_mean(yn, n);
        let mut shared = vec![0.0; n];
        mat_tr_vec_add(&c.beta_x, &ybar, &mut shared);
        if c.mean_noise {
            let s2 = tree_sum_vec(m, n, |p, acc| c.add_sigma2_adjoint_z(&zi[p * nd..(p + 1) * nd], acc));
            for (v, s) in shared.iter_mut().zip(&s2) {
                *v += s / m as f64;
            }
        }
        let mut target = vec![0.0; m * n];
        target.par_chunks_mut(n).enumerate().with_min_len(256).for_each(|(p, o)| {
            let x = eta.first.sample(p);
            let a = eta.second.sample(p);
            let yp = &yn[p * n..(p + 1) * n];
            f.grad_x(t, x, a, &eta, o);
            mat_tr_vec_add(&c.b1, yp, o);
            c.add_sigma1_adjoint_z(&zi[p * nd..(p + 1) * nd], o);
            for j in 0..n {
                o[j] = yp[j] + h * (o[j] + mu_avg[p * n + j] + shared[j]);
            }
        });
        let yfit = fit(basis, n, xs, &target, n, i)?;
        y[i] = yfit.predict_cloud(xs);
        z[i] = zi;
        fits[i] = yfit;
    }
    Ok(AdjointPaths { trajectory: traj, y, z, fits })
}
