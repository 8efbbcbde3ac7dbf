use serde::{Deserialize, Serialize};

use crate::error::{MfcError, Result};
use crate::fbsde::PicardConfig;
use crate::model::{Partition, ProblemSpec};
use crate::rates::reference_control;
use crate::reduce::tree_mean;
use crate::sim::{BrownianStore, ControlPath};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderPair {
    pub s: f64,
    pub t: f64,
    pub statistic: f64,
    /// Same pair on the twice finer grid.
    pub statistic_refined: f64,
}

/// Largest statistic among pairs of one length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderLevel {
    pub length: f64,
    pub max_statistic: f64,
    pub max_statistic_refined: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub p: u32,
    pub pairs: Vec<HolderPair>,
    pub levels: Vec<HolderLevel>,
    pub max_statistic: f64,
    pub max_statistic_refined: f64,
    /// `|refined - coarse| / coarse` of the maximum.
    pub relative_change: f64,
    /// Relative change at most 25%.
    pub stable: bool,
    pub finite: bool,
}

/// `E[sup_{r in [s, t]} |a_r - a_s|^p]^(1/p)` over grid points of `path`.
fn sup_moment(path: &ControlPath, i0: usize, i1: usize, p: u32) -> f64 {
    let (m, k) = (path.particles(), path.dim());
    let base = path.interval(i0);
    let last = i1.min(path.partition().intervals() - 1);
    tree_mean(m, |q| {
        let a0 = &base[q * k..(q + 1) * k];
        let mut sup: f64 = 0.0;
        for i in i0 + 1..=last {
            let a = &path.interval(i)[q * k..(q + 1) * k];
            let d = a.iter().zip(a0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            sup = sup.max(d);
        }
        sup.powi(p as i32)
    })
    .powf(1.0 / p as f64)
}

fn knot(grid: &Partition, t: f64) -> usize {
    let n = grid.intervals();
    ((t / grid.horizon() * n as f64).round() as usize).min(n)
}

/// Normalised Hölder-1/2 statistic of the optimal control over dyadic pairs
/// of `fine`, recomputed on the twice finer grid with the same noise.
///
/// `fine` must be uniform with a power-of-two number of steps.
pub fn holder_experiment(
    spec: &ProblemSpec,
    fine: &Partition,
    m: usize,
    p: u32,
    seed: u64,
    picard: &PicardConfig,
) -> Result<HolderReport> {
    spec.check()?;
    let n = fine.intervals();
    if !n.is_power_of_two() || n < 2 {
        return Err(MfcError::config("Hölder experiment needs a grid with a power-of-two step count of at least 2"));
    }
    if *fine != Partition::uniform(spec.horizon(), n)? {
        return Err(MfcError::config("Hölder experiment needs a uniform grid"));
    }
    if p == 0 {
        return Err(MfcError::config("Hölder moment p must be positive"));
    }
    let refined = Partition::uniform(spec.horizon(), 2 * n)?;
    let store = BrownianStore::new(seed, spec.horizon(), 2 * n, spec.d())?;
    let coarse_path = reference_control(spec, fine, m, &store, picard)?;
    let fine_path = reference_control(spec, &refined, m, &store, picard)?;
    let norm = 1.0 + spec.initial_law.lp_norm(p)?;

    let horizon = spec.horizon();
    let mut pairs = Vec::new();
    let mut levels = Vec::new();
    let mut len = horizon;
    let mut count = 1usize;
    while count <= n {
        let (mut lmax, mut lmax_r) = (0.0f64, 0.0f64);
        for j in 0..count {
            let (s, t) = (j as f64 * len, (j + 1) as f64 * len);
            let scale = norm * len.sqrt();
            let stat = sup_moment(&coarse_path, knot(fine, s), knot(fine, t), p) / scale;
            let stat_r = sup_moment(&fine_path, knot(&refined, s), knot(&refined, t), p) / scale;
            lmax = lmax.max(stat);
            lmax_r = lmax_r.max(stat_r);
            pairs.push(HolderPair { s, t, statistic: stat, statistic_refined: stat_r });
        }
        levels.push(HolderLevel { length: len, max_statistic: lmax, max_statistic_refined: lmax_r });
        len /= 2.0;
        count *= 2;
    }
    let max_statistic = pairs.iter().map(|q| q.statistic).fold(0.0, f64::max);
    let max_statistic_refined = pairs.iter().map(|q| q.statistic_refined).fold(0.0, f64::max);
    let finite = pairs.iter().all(|q| q.statistic.is_finite() && q.statistic_refined.is_finite());
    let relative_change = if max_statistic > 0.0 {
        (max_statistic_refined - max_statistic).abs() / max_statistic
    } else if max_statistic_refined == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(HolderReport {
        p,
        pairs,
        levels,
        max_statistic,
        max_statistic_refined,
        relative_change,
        stable: finite && relative_change <= 0.25,
        finite,
    })
}
