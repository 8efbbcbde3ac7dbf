use super::Feedback;
use crate::error::{MfcError, Result};
use crate::sim::JointMeasure;

fn coupled_cost(a: &JointMeasure, b: &JointMeasure, perm_a: &[usize], perm_b: &[usize]) -> f64 {
    let m = a.len();
    let mut s = 0.0;
    for (&i, &j) in perm_a.iter().zip(perm_b) {
        for (u, v) in a.first.sample(i).iter().zip(b.first.sample(j)) {
            s += (u - v) * (u - v);
        }
        for (u, v) in a.second.sample(i).iter().zip(b.second.sample(j)) {
            s += (u - v) * (u - v);
        }
    }
    (s / m as f64).sqrt()
}

/// Upper bound on the 2-Wasserstein distance between two equal-size clouds of
/// (state, adjoint) pairs: the cheaper of the index coupling and the coupling
/// that matches samples in order of their first state coordinate.
pub fn coupling_distance_bound(a: &JointMeasure, b: &JointMeasure) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MfcError::config("coupling bound needs clouds of equal size"));
    }
    let m = a.len();
    let ident: Vec<usize> = (0..m).collect();
    let sorted = |c: &JointMeasure| {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&i, &j| c.first.sample(i)[0].total_cmp(&c.first.sample(j)[0]));
        idx
    };
    let by_index = coupled_cost(a, b, &ident, &ident);
    let by_order = coupled_cost(a, b, &sorted(a), &sorted(b));
    Ok(by_index.min(by_order))
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Largest ratio `|h(t,x,y,chi) - h(t,x',y',chi')| / (|x-x'| + |y-y'| + W2(chi, chi'))`
/// over particles paired by index.
pub fn lipschitz_ratio(map: &dyn Feedback, k: usize, t: f64, chi1: &JointMeasure, chi2: &JointMeasure) -> Result<f64> {
    let a1 = map.evaluate_cloud(t, chi1, None)?;
    let a2 = map.evaluate_cloud(t, chi2, None)?;
    let w = coupling_distance_bound(chi1, chi2)?;
    let mut worst: f64 = 0.0;
    for i in 0..chi1.len() {
        let den = norm_diff(chi1.first.sample(i), chi2.first.sample(i))
            + norm_diff(chi1.second.sample(i), chi2.second.sample(i))
            + w;
        let num = norm_diff(&a1[i * k..(i + 1) * k], &a2[i * k..(i + 1) * k]);
        if den > 0.0 {
            worst = worst.max(num / den);
        } else if num > 0.0 {
            return Ok(f64::INFINITY);
        }
    }
    Ok(worst)
}

/// Largest ratio `|h(t,.) - h(t',.)| / ((1 + |x| + |y| + |chi|_2) |t - t'|^(1/2))` over the cloud.
pub fn time_holder_ratio(map: &dyn Feedback, k: usize, t: f64, tp: f64, chi: &JointMeasure) -> Result<f64> {
    let a1 = map.evaluate_cloud(t, chi, None)?;
    let a2 = map.evaluate_cloud(tp, chi, None)?;
    let gap = (t - tp).abs().sqrt();
    let cloud = chi.second_moment().sqrt();
    let mut worst: f64 = 0.0;
    for i in 0..chi.len() {
        let size = 1.0 + norm_diff(chi.first.sample(i), &vec![0.0; chi.first.dim()])
            + norm_diff(chi.second.sample(i), &vec![0.0; chi.second.dim()])
            + cloud;
        worst = worst.max(norm_diff(&a1[i * k..(i + 1) * k], &a2[i * k..(i + 1) * k]) / (size * gap));
    }
    Ok(worst)
}
