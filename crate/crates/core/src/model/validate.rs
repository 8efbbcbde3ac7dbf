//! Sampled checks of the standing assumptions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::model::{DynamicsAt, ProblemSpec};
use crate::sim::{EmpiricalMeasure, JointMeasure};

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ClauseResult {
    pub clause: String,
    pub passed: bool,
    pub statistic: f64,
    pub detail: String,
    /// The offending probe, when the clause failed on one.
    pub probe: Option<String>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ValidationReport {
    pub problem: String,
    pub probes: usize,
    pub seed: u64,
    pub clauses: Vec<ClauseResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&ClauseResult> {
        self.clauses.iter().find(|c| c.clause == name)
    }

    pub fn failures(&self) -> Vec<&ClauseResult> {
        self.clauses.iter().filter(|c| !c.passed).collect()
    }
}

const CLOUD: usize = 4;
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const CONVEXITY_TOL: f64 = -1e-9;
const HOLDER_LEVELS: u32 = 16;
const HOLDER_BLOWUP: f64 = 8.0;

#[derive(Clone, Debug)]
struct Probe {
    t: f64,
    x: Vec<f64>,
    a: Vec<f64>,
    eta: JointMeasure,
}

impl Probe {
    fn describe(&self) -> String {
        format!(
            "t={:.6} x={:?} a={:?} cloud_x={:?} cloud_a={:?}",
            self.t,
            self.x,
            self.a,
            self.eta.first.samples(),
            self.eta.second.samples()
        )
    }

    fn size(&self) -> f64 {
        1.0 + sq(&self.x) + sq(&self.a) + self.eta.second_moment()
    }
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn action_point(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut a = normals(rng, spec.k());
    spec.action.project(&mut a);
    a
}

fn random_probe(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> Probe {
    let (n, k) = (spec.n(), spec.k());
    let t = rng.random::<f64>() * spec.horizon();
    let x = normals(rng, n);
    let a = action_point(spec, rng);
    let cx = normals(rng, n * CLOUD);
    let ca: Vec<f64> = (0..CLOUD).flat_map(|_| action_point(spec, rng)).collect();
    let eta = JointMeasure::from_parts(n, cx, k, ca).expect("probe cloud");
    Probe { t, x, a, eta }
}

/// A second probe at the same time, coupled to `p` by index.
fn perturbed_probe(spec: &ProblemSpec, p: &Probe, rng: &mut ChaCha8Rng, scale: f64) -> Probe {
    let (n, k) = (spec.n(), spec.k());
    let shift = |v: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        v.iter().map(|x| x + scale * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let x = shift(&p.x, rng);
    let mut a = shift(&p.a, rng);
    spec.action.project(&mut a);
    let cx = shift(p.eta.first.samples(), rng);
    let mut ca = shift(p.eta.second.samples(), rng);
    spec.action.project_rows(&mut ca);
    let eta = JointMeasure::from_parts(n, cx, k, ca).expect("probe cloud");
    Probe { t: p.t, x, a, eta }
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / 1f64.max(analytic.abs()).max(fd.abs())
}

fn with_cloud(eta: &JointMeasure, j: usize, coord: usize, on_state: bool, delta: f64) -> JointMeasure {
    let mut xs = eta.first.samples().to_vec();
    let mut as_ = eta.second.samples().to_vec();
    if on_state {
        xs[j * eta.first.dim() + coord] += delta;
    } else {
        as_[j * eta.second.dim() + coord] += delta;
    }
    JointMeasure::from_parts(eta.first.dim(), xs, eta.second.dim(), as_).expect("perturbed cloud")
}

fn check_gradients(spec: &ProblemSpec, p: &Probe) -> (f64, String) {
    let (n, k) = (spec.n(), spec.k());
    let f = &spec.cost.running;
    let g = &spec.cost.terminal;
    let fval = |x: &[f64], a: &[f64], eta: &JointMeasure| f.value(p.t, x, a, eta);
    let mut worst = (0.0, String::new());
    let mut note = |err: f64, what: String| {
        if err > worst.0 || err.is_nan() {
            worst = (if err.is_nan() { f64::INFINITY } else { err }, what);
        }
    };
    let mut gx = vec![0.0; n];
    let mut ga = vec![0.0; k];
    f.grad_x(p.t, &p.x, &p.a, &p.eta, &mut gx);
    f.grad_a(p.t, &p.x, &p.a, &p.eta, &mut ga);
    for i in 0..n {
        let (mut xp, mut xm) = (p.x.clone(), p.x.clone());
        xp[i] += FD_STEP;
        xm[i] -= FD_STEP;
        let fd = (fval(&xp, &p.a, &p.eta) - fval(&xm, &p.a, &p.eta)) / (2.0 * FD_STEP);
        note(rel_err(gx[i], fd), format!("grad_x f[{i}]"));
    }
    for i in 0..k {
        let (mut ap, mut am) = (p.a.clone(), p.a.clone());
        ap[i] += FD_STEP;
        am[i] -= FD_STEP;
        let fd = (fval(&p.x, &ap, &p.eta) - fval(&p.x, &am, &p.eta)) / (2.0 * FD_STEP);
        note(rel_err(ga[i], fd), format!("grad_a f[{i}]"));
    }
    // Measure derivatives: moving one sample by delta changes f by kernel * delta / M.
    let m = p.eta.len() as f64;
    let (xj, aj) = (p.eta.first.sample(0), p.eta.second.sample(0));
    let mut gm = vec![0.0; n];
    let mut gn = vec![0.0; k];
    f.grad_mu(p.t, &p.x, &p.a, &p.eta, xj, aj, &mut gm);
    f.grad_nu(p.t, &p.x, &p.a, &p.eta, xj, aj, &mut gn);
    for i in 0..n {
        let fd = (fval(&p.x, &p.a, &with_cloud(&p.eta, 0, i, true, FD_STEP))
            - fval(&p.x, &p.a, &with_cloud(&p.eta, 0, i, true, -FD_STEP)))
            / (2.0 * FD_STEP);
        note(rel_err(gm[i] / m, fd), format!("grad_mu f[{i}]"));
    }
    for i in 0..k {
        let fd = (fval(&p.x, &p.a, &with_cloud(&p.eta, 0, i, false, FD_STEP))
            - fval(&p.x, &p.a, &with_cloud(&p.eta, 0, i, false, -FD_STEP)))
            / (2.0 * FD_STEP);
        note(rel_err(gn[i] / m, fd), format!("grad_nu f[{i}]"));
    }
    let mu = &p.eta.first;
    let mut tg = vec![0.0; n];
    g.grad_x(&p.x, mu, &mut tg);
    for i in 0..n {
        let (mut xp, mut xm) = (p.x.clone(), p.x.clone());
        xp[i] += FD_STEP;
        xm[i] -= FD_STEP;
        let fd = (g.value(&xp, mu) - g.value(&xm, mu)) / (2.0 * FD_STEP);
        note(rel_err(tg[i], fd), format!("grad_x g[{i}]"));
    }
    g.grad_mu(&p.x, mu, mu.sample(0), &mut tg);
    for i in 0..n {
        let shifted = |d: f64| {
            let mut xs = mu.samples().to_vec();
            xs[i] += d;
            EmpiricalMeasure::new(n, xs).expect("perturbed cloud")
        };
        let fd = (g.value(&p.x, &shifted(FD_STEP)) - g.value(&p.x, &shifted(-FD_STEP))) / (2.0 * FD_STEP);
        note(rel_err(tg[i] / m, fd), format!("grad_mu g[{i}]"));
    }
    worst
}

fn gradient_vector(spec: &ProblemSpec, p: &Probe) -> Vec<f64> {
    let (n, k) = (spec.n(), spec.k());
    let mut out = vec![0.0; n + k];
    let (gx, ga) = out.split_at_mut(n);
    spec.cost.running.grad_x(p.t, &p.x, &p.a, &p.eta, gx);
    spec.cost.running.grad_a(p.t, &p.x, &p.a, &p.eta, ga);
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Index-coupling bound on the distance between two equal-size probe clouds.
fn cloud_dist(a: &JointMeasure, b: &JointMeasure) -> f64 {
    let m = a.len() as f64;
    ((dist(a.first.samples(), b.first.samples()).powi(2) + dist(a.second.samples(), b.second.samples()).powi(2)) / m)
        .sqrt()
}

/// Convexity residual of the running cost between two coupled probes, minus the moduli terms.
fn convexity_residual(spec: &ProblemSpec, p: &Probe, q: &Probe) -> f64 {
    let (n, k) = (spec.n(), spec.k());
    let f = &spec.cost.running;
    let m = p.eta.len();
    let mut gx = vec![0.0; n];
    let mut ga = vec![0.0; k];
    f.grad_x(p.t, &p.x, &p.a, &p.eta, &mut gx);
    f.grad_a(p.t, &p.x, &p.a, &p.eta, &mut ga);
    let mut lin: f64 = gx.iter().zip(q.x.iter().zip(&p.x)).map(|(g, (u, v))| g * (u - v)).sum::<f64>()
        + ga.iter().zip(q.a.iter().zip(&p.a)).map(|(g, (u, v))| g * (u - v)).sum::<f64>();
    let mut gm = vec![0.0; n];
    let mut gn = vec![0.0; k];
    let mut spread = 0.0;
    for j in 0..m {
        let (xj, aj) = (p.eta.first.sample(j), p.eta.second.sample(j));
        f.grad_mu(p.t, &p.x, &p.a, &p.eta, xj, aj, &mut gm);
        f.grad_nu(p.t, &p.x, &p.a, &p.eta, xj, aj, &mut gn);
        let (qx, qa) = (q.eta.first.sample(j), q.eta.second.sample(j));
        lin += (gm.iter().zip(qx.iter().zip(xj)).map(|(g, (u, v))| g * (u - v)).sum::<f64>()
            + gn.iter().zip(qa.iter().zip(aj)).map(|(g, (u, v))| g * (u - v)).sum::<f64>())
            / m as f64;
        spread += dist(qa, aj).powi(2) / m as f64;
    }
    f.value(q.t, &q.x, &q.a, &q.eta)
        - f.value(p.t, &p.x, &p.a, &p.eta)
        - lin
        - spec.cost.lambda1 * dist(&q.a, &p.a).powi(2)
        - spec.cost.lambda2 * spread
}

fn terminal_convexity_residual(spec: &ProblemSpec, p: &Probe, q: &Probe) -> f64 {
    let n = spec.n();
    let g = &spec.cost.terminal;
    let (mu, nu) = (&p.eta.first, &q.eta.first);
    let mut gx = vec![0.0; n];
    g.grad_x(&p.x, mu, &mut gx);
    let mut lin: f64 = gx.iter().zip(q.x.iter().zip(&p.x)).map(|(g, (u, v))| g * (u - v)).sum();
    let mut gm = vec![0.0; n];
    for j in 0..mu.len() {
        g.grad_mu(&p.x, mu, mu.sample(j), &mut gm);
        lin += gm.iter().zip(nu.sample(j).iter().zip(mu.sample(j))).map(|(g, (u, v))| g * (u - v)).sum::<f64>()
            / mu.len() as f64;
    }
    g.value(&q.x, nu) - g.value(&p.x, mu) - lin
}

fn coefficient_gap(a: &DynamicsAt, b: &DynamicsAt) -> f64 {
    let mut s = (&a.b0 - &b.b0).norm();
    for (u, v) in [
        (&a.b1, &b.b1),
        (&a.b2, &b.b2),
        (&a.beta_x, &b.beta_x),
        (&a.beta_a, &b.beta_a),
        (&a.sigma0, &b.sigma0),
    ] {
        s += (u - v).norm();
    }
    for (u, v) in a.sigma1.iter().zip(&b.sigma1).chain(a.sigma2.iter().zip(&b.sigma2)) {
        s += (u - v).norm();
    }
    s
}

/// Largest normalized time increment of the coefficients over the dyadic
/// pairs of each level, `max_pairs |coef(t') - coef(t)| / |t' - t|^(1/2)`.
fn holder_levels(spec: &ProblemSpec, probes: &[Probe]) -> Vec<(f64, f64, f64)> {
    let horizon = spec.horizon();
    let mut out = Vec::new();
    for level in 1..=HOLDER_LEVELS {
        let count = 1usize << level;
        let gap = horizon / count as f64;
        let coeffs: Vec<DynamicsAt> = (0..=count).map(|j| spec.dynamics.at(horizon * (j as f64 / count as f64))).collect();
        let costs: Vec<Vec<f64>> = (0..=count)
            .map(|j| {
                let t = horizon * (j as f64 / count as f64);
                probes.iter().map(|p| spec.cost.running.value(t, &p.x, &p.a, &p.eta)).collect()
            })
            .collect();
        let (mut worst, mut at) = (0.0f64, 0.0);
        for j in 0..count {
            let mut diff = coefficient_gap(&coeffs[j], &coeffs[j + 1]);
            for (pi, p) in probes.iter().enumerate() {
                diff += (costs[j + 1][pi] - costs[j][pi]).abs() / p.size();
            }
            let ratio = diff / gap.sqrt();
            if !(ratio <= worst) {
                worst = if ratio.is_nan() { f64::INFINITY } else { ratio };
                at = horizon * (j as f64 / count as f64);
            }
        }
        out.push((gap, worst, at));
    }
    out
}

/// Runs every clause on `probes` random probe points drawn from `seed`.
pub fn validate_assumptions(spec: &ProblemSpec, probes: usize, seed: u64) -> ValidationReport {
    let mut clauses = Vec::new();
    let mut push = |clause: &str, passed: bool, statistic: f64, detail: String, probe: Option<String>| {
        clauses.push(ClauseResult { clause: clause.into(), passed, statistic, detail, probe });
    };

    if let Err(e) = spec.check() {
        push("structure", false, f64::NAN, e.to_string(), None);
        return ValidationReport { problem: spec.name.clone(), probes, seed, clauses };
    }
    push("structure", true, 0.0, "dimensions and side data consistent".into(), None);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Probe> = (0..probes.max(1)).map(|_| random_probe(spec, &mut rng)).collect();

    // Boundedness on a 1000-point scan.
    let horizon = spec.horizon();
    let mut sup: f64 = 0.0;
    let mut bad_t = None;
    for j in 0..1000 {
        let t = horizon * j as f64 / 999.0;
        let s = spec.dynamics.at(t).sup_norm();
        let fv = spec.cost.running.value(t, &pts[0].x, &pts[0].a, &pts[0].eta);
        if !s.is_finite() || !fv.is_finite() {
            bad_t.get_or_insert(t);
        }
        sup = sup.max(s);
    }
    match bad_t {
        None => push("boundedness", true, sup, format!("coefficient sup-norm {sup:.6e} on 1000 points"), None),
        Some(t) => push("boundedness", false, f64::INFINITY, format!("non-finite coefficient or cost at t = {t}"), None),
    }

    // Derivative consistency.
    let mut worst = (0.0f64, String::new(), None);
    for p in &pts {
        let (err, what) = check_gradients(spec, p);
        if err > worst.0 {
            worst = (err, what, Some(p.describe()));
        }
    }
    let ok = worst.0 <= FD_TOL;
    push(
        "gradient-consistency",
        ok,
        worst.0,
        if ok {
            format!("max relative error {:.3e} against central differences", worst.0)
        } else {
            format!("{} disagrees with central differences (relative error {:.3e})", worst.1, worst.0)
        },
        if ok { None } else { worst.2 },
    );

    // Lipschitz ratio of the gradients, and convexity residuals, on coupled pairs.
    let pairs: Vec<(Probe, Probe)> = pts
        .iter()
        .map(|p| {
            let q = perturbed_probe(spec, p, &mut rng, 0.5);
            (p.clone(), q)
        })
        .collect();
    let mut lip: f64 = 0.0;
    let mut lip_probe = None;
    for (p, q) in &pairs {
        let den = dist(&p.x, &q.x) + dist(&p.a, &q.a) + cloud_dist(&p.eta, &q.eta);
        if den > 0.0 {
            let r = dist(&gradient_vector(spec, p), &gradient_vector(spec, q)) / den;
            if !(r <= lip) {
                lip = if r.is_nan() { f64::INFINITY } else { r };
                lip_probe = Some(p.describe());
            }
        }
    }
    let ok = lip.is_finite();
    push(
        "gradient-lipschitz",
        ok,
        lip,
        format!("largest gradient difference ratio {lip:.6e} over {} pairs", pairs.len()),
        if ok { None } else { lip_probe },
    );

    let lambda = spec.lambda();
    let mut min_res = f64::INFINITY;
    let mut res_probe = None;
    for (p, q) in &pairs {
        for r in [
            convexity_residual(spec, p, q),
            convexity_residual(spec, q, p),
            terminal_convexity_residual(spec, p, q),
            terminal_convexity_residual(spec, q, p),
        ] {
            if !(r >= min_res) {
                min_res = if r.is_nan() { f64::NEG_INFINITY } else { r };
                res_probe = Some(format!("{} | {}", p.describe(), q.describe()));
            }
        }
    }
    let moduli_ok = lambda > 0.0;
    let ok = moduli_ok && min_res >= CONVEXITY_TOL;
    let detail = if !moduli_ok {
        format!(
            "strong convexity moduli lambda1 = {}, lambda2 = {} give lambda1 + lambda2 = 0",
            spec.cost.lambda1, spec.cost.lambda2
        )
    } else {
        format!("smallest convexity residual {min_res:.3e} (tolerance {CONVEXITY_TOL:e})")
    };
    push("convexity", ok, min_res, detail, if ok || !moduli_ok { None } else { res_probe });

    // Time regularity: the normalized increments must not blow up as the gap shrinks.
    let levels = holder_levels(spec, &pts[..pts.len().min(3)]);
    let coarse = levels[..4].iter().map(|l| l.1).fold(0.0, f64::max);
    let (fine, fine_at) = levels[levels.len() - 3..]
        .iter()
        .fold((0.0f64, 0.0), |acc, l| if l.1 > acc.0 { (l.1, l.2) } else { acc });
    let ok = fine.is_finite() && (fine <= HOLDER_BLOWUP * coarse || fine <= 1e-8);
    let ratio = if coarse > 0.0 { fine / coarse } else if fine > 1e-8 { f64::INFINITY } else { 0.0 };
    push(
        "time-holder",
        ok,
        ratio,
        format!(
            "normalized increment {fine:.4e} at gap {:.3e} vs {coarse:.4e} at gaps >= {:.3e}",
            levels[levels.len() - 1].0,
            levels[3].0
        ),
        if ok { None } else { Some(format!("pair starting at t = {fine_at}")) },
    );

    ValidationReport { problem: spec.name.clone(), probes, seed, clauses }
}
