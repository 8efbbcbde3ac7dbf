use mfc_core::error::Result;
use mfc_core::feedback::Feedback;
use mfc_core::model::builtin::{example1, plain_lq, quadratic_problem};
use mfc_core::model::{
    ActionSet, InitialLaw, LinearDynamics, Partition, ProblemKind, ProblemSpec, QuadraticCost, QuadraticTerminal,
    ScalarDynamics,
};
use mfc_core::sim::*;
use mfc_core::time_fn::TimeFn;
use proptest::prelude::*;

fn k(v: f64) -> TimeFn<f64> {
    TimeFn::Const(v)
}

fn scalar(dynamics: ScalarDynamics, running: QuadraticCost, x0: f64) -> ProblemSpec {
    quadratic_problem(
        "test",
        ProblemKind::Custom,
        LinearDynamics::scalar(1.0, &dynamics),
        running,
        QuadraticTerminal::default(),
        ActionSet::full(1),
        InitialLaw::Dirac(vec![x0]),
        None,
    )
}

fn cloud(xs: &[f64]) -> Ensemble {
    EmpiricalMeasure::new(1, xs.to_vec()).unwrap()
}

#[test]
fn single_steps_by_hand() {
    let drift = scalar(ScalarDynamics { b0: k(1.0), ..Default::default() }, QuadraticCost::default(), 0.0);
    let out = em_step(&drift, 0.0, 0.5, &cloud(&[0.0]), &[0.0], &[1.7]).unwrap();
    assert_eq!(out.samples(), &[0.5]);

    let noise = scalar(ScalarDynamics { sigma0: k(1.0), ..Default::default() }, QuadraticCost::default(), 0.0);
    let out = em_step(&noise, 0.0, 0.5, &cloud(&[0.0]), &[0.0], &[0.3]).unwrap();
    assert_eq!(out.samples(), &[0.3]);

    let mf = scalar(ScalarDynamics { beta_x: k(1.0), ..Default::default() }, QuadraticCost::default(), 0.0);
    let out = em_step(&mf, 0.0, 1.0, &cloud(&[0.0, 2.0]), &[0.0, 0.0], &[0.0, 0.0]).unwrap();
    assert_eq!(out.samples(), &[1.0, 3.0]);

    assert!(em_step(&mf, 0.0, 0.0, &cloud(&[0.0]), &[0.0], &[0.0]).is_err());
    assert!(em_step(&mf, 0.0, 0.1, &cloud(&[0.0, 1.0]), &[0.0], &[0.0, 0.0]).is_err());
}

#[test]
fn zero_dynamics_keep_initial_draws() {
    let mut spec = scalar(ScalarDynamics::default(), QuadraticCost::default(), 0.0);
    spec.initial_law = InitialLaw::Gaussian { mean: vec![1.0], std: vec![2.0] };
    let part = Partition::uniform(1.0, 4).unwrap();
    let store = BrownianStore::new(9, 1.0, 4, 1).unwrap();
    let traj = simulate_discrete(&spec, &part, &ControlPath::zeros(part.clone(), 50, 1), 50, &store).unwrap();
    assert!(traj.states.iter().all(|s| s == &traj.states[0]));
}

#[test]
fn euler_recursion_for_linear_decay() {
    let spec = scalar(ScalarDynamics { b1: k(-1.0), ..Default::default() }, QuadraticCost::default(), 1.0);
    let part = Partition::uniform(1.0, 2).unwrap();
    let store = BrownianStore::new(1, 1.0, 2, 1).unwrap();
    let traj = simulate_discrete(&spec, &part, &ControlPath::zeros(part.clone(), 3, 1), 3, &store).unwrap();
    assert_eq!(traj.terminal(), &[0.25, 0.25, 0.25]);
}

#[test]
fn pure_diffusion_is_refinement_consistent() {
    let spec = scalar(ScalarDynamics { sigma0: k(1.0), ..Default::default() }, QuadraticCost::default(), 0.0);
    let store = BrownianStore::new(4, 1.0, 8, 1).unwrap();
    let run = |n| {
        let part = Partition::uniform(1.0, n).unwrap();
        simulate_discrete(&spec, &part, &ControlPath::zeros(part.clone(), 20, 1), 20, &store).unwrap()
    };
    let (a, b) = (run(4), run(8));
    assert_eq!(a.terminal(), b.terminal());
    // fine surrogate with a zero path matches the discrete scheme on the same grid
    let part = Partition::uniform(1.0, 8).unwrap();
    let zero = ControlPath::zeros(part.clone(), 20, 1);
    let fine = simulate_fine(&spec, &part, ControlSource::Path(&zero), 20, &store).unwrap();
    assert_eq!(fine.states, b.states);
}

struct MinusState;
impl Feedback for MinusState {
    fn evaluate_cloud(&self, _t: f64, chi: &JointMeasure, _warm: Option<&[f64]>) -> Result<Vec<f64>> {
        Ok(chi.first.samples().iter().map(|x| -x).collect())
    }
}
struct Zero;
impl AdjointField for Zero {
    fn adjoint(&self, _t: f64, states: &EmpiricalMeasure) -> Result<Vec<f64>> {
        Ok(vec![0.0; states.samples().len()])
    }
}

#[test]
fn fine_feedback_tracks_exponential_decay() {
    let spec = scalar(ScalarDynamics { b2: k(1.0), ..Default::default() }, QuadraticCost::default(), 1.0);
    for n in [64, 256] {
        let fine = Partition::uniform(1.0, n).unwrap();
        let store = BrownianStore::new(2, 1.0, n, 1).unwrap();
        let traj =
            simulate_fine(&spec, &fine, ControlSource::Feedback { map: &MinusState, field: &Zero }, 2, &store).unwrap();
        let err = (traj.terminal()[0] - (-1f64).exp()).abs();
        assert!(err <= 2.0 / n as f64, "{n}: {err}");
    }
}

#[test]
fn costs_of_constant_paths() {
    let part = Partition::new(vec![0.0, 0.1, 0.55, 1.0]).unwrap();
    let store = BrownianStore::new(2, 1.0, 20, 1).unwrap();
    // qx/2 (x - 1)^2 with x = 0, qx = 2: f = 1
    let one = QuadraticCost { qx: k(2.0), x_target: k(1.0), ..Default::default() };
    let spec = scalar(ScalarDynamics::default(), one, 0.0);
    let zero = ControlPath::zeros(part.clone(), 7, 1);
    let traj = simulate_discrete(&spec, &part, &zero, 7, &store).unwrap();
    assert_eq!(cost_discrete(&spec, &part, &traj, &zero).unwrap(), (1.0, 0.0));

    let half = scalar(ScalarDynamics::default(), QuadraticCost { qx: k(1.0), ..Default::default() }, 1.0);
    let traj = simulate_discrete(&half, &part, &zero, 7, &store).unwrap();
    assert_eq!(cost_discrete(&half, &part, &traj, &zero).unwrap(), (0.5, 0.0));
    assert_eq!(cost_fine(&half, &part, &traj).unwrap(), (0.5, 0.0));

    let other = ControlPath::constant(part.clone(), 7, &[1.0]);
    assert!(cost_discrete(&half, &part, &traj, &other).is_err());
}

#[test]
fn zero_problem_costs_nothing() {
    let spec = scalar(
        ScalarDynamics { b2: k(1.0), sigma0: k(1.0), ..Default::default() },
        QuadraticCost::default(),
        0.3,
    );
    let part = Partition::uniform(1.0, 4).unwrap();
    let store = BrownianStore::new(3, 1.0, 4, 1).unwrap();
    let ctrl = ControlPath::constant(part.clone(), 9, &[0.7]);
    let traj = simulate_discrete(&spec, &part, &ctrl, 9, &store).unwrap();
    assert_eq!(cost_discrete(&spec, &part, &traj, &ctrl).unwrap(), (0.0, 0.0));
}

#[test]
fn wasserstein_examples() {
    assert_eq!(wasserstein2_1d(&cloud(&[0.0, 1.0]), &cloud(&[1.0, 2.0])).unwrap(), 1.0);
    assert_eq!(wasserstein2_1d(&cloud(&[3.0, 1.0]), &cloud(&[1.0, 3.0])).unwrap(), 0.0);
    assert!(wasserstein2_1d(&cloud(&[0.0]), &cloud(&[1.0, 2.0])).is_err());
}

#[test]
fn mean_field_free_particles_decouple() {
    let spec = plain_lq();
    let part = Partition::uniform(1.0, 16).unwrap();
    let store = BrownianStore::new(21, 1.0, 16, 1).unwrap();
    let run = |m| {
        let ctrl = ControlPath::constant(part.clone(), m, &[0.4]);
        simulate_discrete(&spec, &part, &ctrl, m, &store).unwrap()
    };
    let (one, many) = (run(1), run(1000));
    for i in 0..=16 {
        assert_eq!(one.states[i][0], many.states[i][0]);
    }
}

#[test]
fn permuting_particles_permutes_states() {
    let spec = example1();
    let part = Partition::uniform(1.0, 8).unwrap();
    let m = 300;
    let store = BrownianStore::new(5, 1.0, 8, 1).unwrap();
    let noise = NoiseBlock::generate(&store, &part, m).unwrap();
    let initial = spec.initial_law.sample(&store, m);
    let perm: Vec<usize> = (0..m).map(|p| (p * 7 + 3) % m).collect();
    let mut raw = Vec::new();
    for i in 0..8 {
        let step = noise.step(i);
        raw.extend(perm.iter().map(|&p| step[p]));
    }
    let permuted = Increments::Block(NoiseBlock::from_raw(m, 8, 1, raw).unwrap());
    let init_p: Vec<f64> = perm.iter().map(|&p| initial[p]).collect();
    let ctrl: Vec<f64> = (0..m).map(|p| (p as f64 * 0.01).sin()).collect();
    let ctrl_p: Vec<f64> = perm.iter().map(|&p| ctrl[p]).collect();
    let a = drive(&spec, &part, initial, &Increments::Block(noise), |_, _| Ok(ctrl.clone()), |_, _, _| Ok(())).unwrap();
    let b = drive(&spec, &part, init_p, &permuted, |_, _| Ok(ctrl_p.clone()), |_, _, _| Ok(())).unwrap();
    // summation order differs, so means agree to rounding only
    assert!((a.mean()[0] - b.mean()[0]).abs() <= 1e-13);
    for (q, &p) in perm.iter().enumerate() {
        assert!((b.samples()[q] - a.samples()[p]).abs() <= 1e-12);
    }
}

#[test]
fn divergence_is_reported() {
    let spec = scalar(ScalarDynamics { b1: k(200.0), ..Default::default() }, QuadraticCost::default(), 1.0);
    let part = Partition::uniform(1.0, 10).unwrap();
    let store = BrownianStore::new(1, 1.0, 10, 1).unwrap();
    let r = simulate_discrete(&spec, &part, &ControlPath::zeros(part.clone(), 2, 1), 2, &store);
    assert!(matches!(r, Err(mfc_core::error::MfcError::Divergence { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frozen_noise_cost_is_strongly_convex(seed in 0u64..1000, scale in 0.1f64..2.0) {
        let spec = example1();
        let part = Partition::uniform(1.0, 4).unwrap();
        let m = 16;
        let store = BrownianStore::new(seed, 1.0, 4, 1).unwrap();
        let gen = |off: u64| {
            let vals = (0..4 * m).map(|j| scale * ((j as u64 * 31 + seed * 7 + off) as f64).sin()).collect();
            ControlPath::new(part.clone(), m, 1, vals).unwrap()
        };
        let (a, b) = (gen(0), gen(13));
        let mid_vals: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| 0.5 * (x + y)).collect();
        let mid = ControlPath::new(part.clone(), m, 1, mid_vals).unwrap();
        let j = |c: &ControlPath| {
            let t = simulate_discrete(&spec, &part, c, m, &store).unwrap();
            cost_discrete(&spec, &part, &t, c).unwrap().0
        };
        let d = h2_distance(&a, &b).unwrap();
        let slack = 0.5 * j(&a) + 0.5 * j(&b) - 0.25 * spec.lambda() * d * d - j(&mid);
        prop_assert!(slack >= -1e-9, "slack {slack}");
    }

    #[test]
    fn refinement_never_changes_terminal_noise(seed in 0u64..10_000) {
        let spec = scalar(ScalarDynamics { sigma0: k(1.0), ..Default::default() }, QuadraticCost::default(), 0.0);
        let store = BrownianStore::new(seed, 1.0, 16, 1).unwrap();
        let term = |n| {
            let part = Partition::uniform(1.0, n).unwrap();
            simulate_discrete(&spec, &part, &ControlPath::zeros(part.clone(), 3, 1), 3, &store).unwrap().terminal().to_vec()
        };
        prop_assert_eq!(term(2), term(16));
    }
}
