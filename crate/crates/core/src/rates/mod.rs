//! Convergence-rate and path-regularity experiments over refining partitions.

mod fit;
mod holder;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{MfcError, Result};
use crate::fbsde::{picard_solve, riccati_oracle_lq1d, PicardConfig, RiccatiSolution};
use crate::feedback::FeedbackMap;
use crate::model::{Partition, ProblemSpec};
use crate::pontryagin::{projected_gradient_descent, OptimizerConfig};
use crate::reduce::{tree_mean, tree_sum};
use crate::sim::{h2_per_particle, simulate_fine, BrownianStore, ControlPath, ControlSource};

pub use fit::fit_loglog_slope;
pub use holder::{holder_experiment, HolderLevel, HolderPair, HolderReport};

/// Which cost the value ladder measures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StateMode {
    /// Euler states on the control partition.
    #[default]
    Discrete,
    /// States on a grid `refinement` times finer than the control partition.
    Continuous { refinement: usize },
}

/// Optimality tolerance of the controls in the control-rate ladder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum EpsSchedule {
    #[default]
    SqrtMesh,
    Fixed(f64),
}

impl EpsSchedule {
    pub fn at(&self, mesh: f64) -> f64 {
        match self {
            EpsSchedule::SqrtMesh => mesh.sqrt(),
            EpsSchedule::Fixed(e) => *e,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    RiccatiOracle,
    FinestGridExtrapolation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub n: usize,
    pub mesh: f64,
    /// Value of the level (a cost, or a distance for control ladders).
    pub value: f64,
    pub error: f64,
    pub mc_std: f64,
    pub wall_ms: f64,
    pub gap_certificate: f64,
    /// Kept by the Monte Carlo filter and used in the order fit.
    pub used: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFlags {
    /// Every error is exactly zero; no order is fitted.
    pub exact: bool,
    /// Fewer than three levels survived the Monte Carlo filter.
    pub inconclusive: bool,
    /// Filtered errors decrease strictly from level to level.
    pub monotone: bool,
    /// `error <= 2 C0 mesh^rate` at every level, `C0` from the coarsest level.
    pub bound_compliant: bool,
    pub c0: f64,
    /// max / min of `error / mesh^rate` over the filtered levels.
    pub constant_ratio: f64,
    /// "two-sided" for compact action sets, "one-sided" otherwise.
    pub regime: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub metric: String,
    /// Rate the bound check uses.
    pub nominal_rate: f64,
    pub levels: Vec<LevelRow>,
    pub reference_value: Option<f64>,
    pub reference: ReferenceKind,
    /// Richardson estimate of the reference's own bias, added to every level's uncertainty.
    pub reference_bias: f64,
    pub fitted_order: Option<f64>,
    pub order_std_error: Option<f64>,
    pub seeds: Vec<u64>,
    pub flags: RateFlags,
}

fn check_inputs(ladder: &[usize], m: usize, seeds: &[u64]) -> Result<()> {
    if ladder.is_empty() || ladder[0] == 0 {
        return Err(MfcError::config("rate ladder must be a nonempty list of positive step counts"));
    }
    if ladder.windows(2).any(|w| w[1] <= w[0] || w[1] % w[0] != 0) {
        return Err(MfcError::config("rate ladder must be strictly refining (each N divides the next)"));
    }
    if m < 2 {
        return Err(MfcError::config("rate experiments need at least 2 particles"));
    }
    if seeds.is_empty() {
        return Err(MfcError::config("rate experiments need at least one seed"));
    }
    Ok(())
}

pub(crate) fn riccati_for(spec: &ProblemSpec) -> Result<Option<RiccatiSolution>> {
    match &spec.lq {
        Some(lq) => {
            let mean = spec.initial_law.mean()[0];
            let var = spec.initial_law.variance()[0];
            Ok(Some(riccati_oracle_lq1d(&lq.coeffs, &lq.terminal, spec.horizon(), mean, var, 1 << 16)?))
        }
        None => Ok(None),
    }
}

/// The optimal control on `fine`: the Riccati feedback along its own flow for
/// LQ problems, the Picard solution otherwise.
pub(crate) fn reference_control(
    spec: &ProblemSpec,
    fine: &Partition,
    m: usize,
    store: &BrownianStore,
    picard: &PicardConfig,
) -> Result<ControlPath> {
    match riccati_for(spec)? {
        Some(field) => {
            let map = FeedbackMap::new(spec)?;
            simulate_fine(spec, fine, ControlSource::Feedback { map: &map, field: &field }, m, store)?.control_path()
        }
        None => picard_solve(spec, fine, m, store, picard)?.control_path(),
    }
}

fn optimize_level(
    spec: &ProblemSpec,
    n: usize,
    m: usize,
    store: &BrownianStore,
    opt: &OptimizerConfig,
    tol: f64,
    refinement: usize,
) -> Result<(crate::pontryagin::OptimizeResult, f64)> {
    let part = Partition::uniform(spec.horizon(), n)?;
    let cfg = OptimizerConfig { tol_gap: tol, refinement, ..opt.clone() };
    let t0 = Instant::now();
    let res = projected_gradient_descent(spec, &part, m, store, &cfg)?;
    Ok((res, t0.elapsed().as_secs_f64() * 1e3))
}

/// Filters, fits and flags a ladder of (value, error, uncertainty) rows.
fn summarise(
    rate: f64,
    mut levels: Vec<LevelRow>,
    extra_uncertainty: f64,
    spec: &ProblemSpec,
) -> (Vec<LevelRow>, Option<(f64, f64)>, RateFlags) {
    let exact = levels.iter().all(|l| l.error == 0.0);
    for l in levels.iter_mut() {
        let u = l.mc_std + extra_uncertainty;
        l.used = !exact && l.error > 0.0 && u <= 0.5 * l.error;
    }
    let used: Vec<&LevelRow> = levels.iter().filter(|l| l.used).collect();
    let any_zero_u = used.iter().any(|l| l.mc_std + extra_uncertainty == 0.0);
    let points: Vec<(f64, f64, f64)> = used
        .iter()
        .map(|l| {
            let u = l.mc_std + extra_uncertainty;
            let w = if any_zero_u { 1.0 } else { (l.error / u).powi(2) };
            (l.mesh, l.error, w)
        })
        .collect();
    let order = if points.len() >= 3 { fit_loglog_slope(&points).ok() } else { None };
    let monotone = used.windows(2).all(|w| w[1].error < w[0].error);
    let c0 = levels.first().map(|l| l.error / l.mesh.powf(rate)).unwrap_or(0.0);
    let bound_compliant = levels.iter().all(|l| l.error <= 2.0 * c0 * l.mesh.powf(rate));
    let consts: Vec<f64> = used.iter().map(|l| l.error / l.mesh.powf(rate)).collect();
    let constant_ratio = if consts.is_empty() {
        1.0
    } else {
        consts.iter().cloned().fold(0.0, f64::max) / consts.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let flags = RateFlags {
        exact,
        inconclusive: !exact && order.is_none(),
        monotone,
        bound_compliant,
        c0,
        constant_ratio,
        regime: if spec.action.is_compact() { "two-sided" } else { "one-sided" }.to_string(),
    };
    (levels, order, flags)
}

/// Optimal discrete values over the ladder against a reference value.
pub fn value_rate_experiment(
    spec: &ProblemSpec,
    ladder: &[usize],
    m: usize,
    seeds: &[u64],
    mode: StateMode,
    opt: &OptimizerConfig,
) -> Result<RateReport> {
    check_inputs(ladder, m, seeds)?;
    spec.check()?;
    let refinement = match mode {
        StateMode::Discrete => 1,
        StateMode::Continuous { refinement } if refinement >= 1 => refinement,
        StateMode::Continuous { .. } => return Err(MfcError::config("continuous-state refinement must be at least 1")),
    };
    let n_max = *ladder.last().expect("nonempty");
    let riccati = riccati_for(spec)?;
    let base = n_max * refinement * if riccati.is_some() { 1 } else { 4 };
    let stores: Vec<BrownianStore> = seeds
        .iter()
        .map(|&s| BrownianStore::new(s, spec.horizon(), base, spec.d()))
        .collect::<Result<_>>()?;

    let s = seeds.len() as f64;
    let run_level = |n: usize| -> Result<(f64, f64, f64, f64)> {
        let mesh = spec.horizon() / n as f64;
        let tol = opt.tol_gap.min(0.01 * mesh.sqrt());
        let (mut v, mut var, mut ms, mut gap) = (0.0, 0.0, 0.0, 0.0f64);
        for store in &stores {
            let (res, wall) = optimize_level(spec, n, m, store, opt, tol, refinement)?;
            v += res.cost / s;
            var += res.cost_std.powi(2);
            ms += wall;
            gap = gap.max(res.gap_certificate);
        }
        Ok((v, var.sqrt() / s, ms, gap))
    };

    let (reference_value, reference, bias) = match &riccati {
        Some(r) => (r.value, ReferenceKind::RiccatiOracle, 0.0),
        None => {
            let (fine_v, _, _, _) = run_level(4 * n_max)?;
            let (coarse_v, _, _, _) = run_level(n_max)?;
            // order one half: the bias of the finer value equals the difference
            (fine_v, ReferenceKind::FinestGridExtrapolation, (coarse_v - fine_v).abs())
        }
    };

    let mut levels = Vec::with_capacity(ladder.len());
    for &n in ladder {
        let (value, mc_std, wall_ms, gap) = run_level(n)?;
        levels.push(LevelRow {
            n,
            mesh: spec.horizon() / n as f64,
            value,
            error: (value - reference_value).abs(),
            mc_std,
            wall_ms,
            gap_certificate: gap,
            used: false,
        });
    }
    let (levels, order, flags) = summarise(0.5, levels, bias, spec);
    Ok(RateReport {
        metric: "value".into(),
        nominal_rate: 0.5,
        levels,
        reference_value: Some(reference_value),
        reference,
        reference_bias: bias,
        fitted_order: order.map(|o| o.0),
        order_std_error: order.map(|o| o.1),
        seeds: seeds.to_vec(),
        flags,
    })
}

/// H2 distance between `eps`-optimal discrete controls and the optimal
/// control on a grid `fine_factor` times finer than the finest level.
#[allow(clippy::too_many_arguments)]
pub fn control_rate_experiment(
    spec: &ProblemSpec,
    ladder: &[usize],
    m: usize,
    seeds: &[u64],
    eps: EpsSchedule,
    fine_factor: usize,
    opt: &OptimizerConfig,
) -> Result<RateReport> {
    check_inputs(ladder, m, seeds)?;
    spec.check()?;
    if fine_factor == 0 {
        return Err(MfcError::config("fine-grid factor must be at least 1"));
    }
    if let EpsSchedule::Fixed(e) = eps {
        if !(e >= 0.0) {
            return Err(MfcError::config("fixed eps must be nonnegative"));
        }
    }
    let n_max = *ladder.last().expect("nonempty");
    let fine = Partition::uniform(spec.horizon(), n_max * fine_factor)?;
    let s = seeds.len() as f64;
    let mut sums = vec![(0.0, 0.0, 0.0, 0.0f64); ladder.len()];
    for &seed in seeds {
        let store = BrownianStore::new(seed, spec.horizon(), fine.intervals(), spec.d())?;
        let reference = reference_control(spec, &fine, m, &store, &opt.fbsde)?;
        for (j, &n) in ladder.iter().enumerate() {
            let mesh = spec.horizon() / n as f64;
            let (res, wall) = optimize_level(spec, n, m, &store, opt, eps.at(mesh), 1)?;
            let per = h2_per_particle(&res.control.embed(&fine)?, &reference);
            let d2 = tree_mean(m, |p| per[p]);
            let d = d2.sqrt();
            let var = tree_sum(m, |p| (per[p] - d2).powi(2)) / (m - 1) as f64;
            // delta method for the square root
            let sd = if d > 0.0 { (var / m as f64).sqrt() / (2.0 * d) } else { 0.0 };
            let e = &mut sums[j];
            e.0 += d / s;
            e.1 += sd * sd;
            e.2 += wall;
            e.3 = e.3.max(res.gap_certificate);
        }
    }
    let levels = ladder
        .iter()
        .zip(&sums)
        .map(|(&n, &(d, var, wall, gap))| LevelRow {
            n,
            mesh: spec.horizon() / n as f64,
            value: d,
            error: d,
            mc_std: var.sqrt() / s,
            wall_ms: wall,
            gap_certificate: gap,
            used: false,
        })
        .collect();
    let (levels, order, flags) = summarise(0.25, levels, 0.0, spec);
    Ok(RateReport {
        metric: "h2-distance".into(),
        nominal_rate: 0.25,
        levels,
        reference_value: None,
        reference: if spec.lq.is_some() { ReferenceKind::RiccatiOracle } else { ReferenceKind::FinestGridExtrapolation },
        reference_bias: 0.0,
        fitted_order: order.map(|o| o.0),
        order_std_error: order.map(|o| o.1),
        seeds: seeds.to_vec(),
        flags,
    })
}
