//! Run configuration: a strict TOML document with one table per concern.

use std::path::{Path, PathBuf};

use mfc_core::fbsde::{Basis, PicardConfig};
use mfc_core::feedback::{FeedbackKind, LqCoefficients};
use mfc_core::model::builtin::{by_name, lq1d, quadratic_problem, BUILTIN_NAMES};
use mfc_core::model::{
    ActionSet, InitialLaw, LinearDynamics, ProblemKind, ProblemSpec, QuadraticCost, QuadraticTerminal, ScalarDynamics,
};
use mfc_core::pontryagin::{ControlMode, InitKind, OptimizerConfig};
use mfc_core::rates::{EpsSchedule, StateMode};
use mfc_core::time_fn::TimeFn;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Worker threads; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub fbsde: PicardConfig,
    #[serde(default)]
    pub rates: RatesSection,
    #[serde(default)]
    pub holder: HolderSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_particles() -> usize {
    100_000
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}

/// Either a built-in name or inline scalar coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomProblem>,
}

/// Constant-coefficient scalar problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomProblem {
    #[serde(default = "one")]
    pub horizon: f64,
    /// Treat as LQ: closed-form feedback and a Riccati reference. Needs
    /// `soft = 0`, `x_target = 0` and an unconstrained action.
    #[serde(default)]
    pub lq: bool,
    /// Feedback construction for non-LQ problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackKind>,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub running: RunningSection,
    #[serde(default)]
    pub terminal: TerminalSection,
    #[serde(default)]
    pub action: ActionSection,
    #[serde(default)]
    pub initial: InitialSection,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSection {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub beta_x: f64,
    pub beta_a: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunningSection {
    pub qx: f64,
    pub qm: f64,
    pub q: f64,
    pub qbar: f64,
    pub r: f64,
    pub c: f64,
    pub soft: f64,
    pub x_target: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminalSection {
    pub gx: f64,
    pub gm: f64,
    pub target: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ActionSection {
    #[default]
    Full,
    Box {
        lo: f64,
        hi: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum InitialSection {
    Dirac { value: f64 },
    Gaussian { mean: f64, std: f64 },
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection::Dirac { value: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Steps of the uniform grid used by solve, optimize and holder.
    pub steps: usize,
    /// Step counts of the rate ladder, each dividing the next.
    pub ladder: Vec<usize>,
    /// Reference grid of the control ladder, as a multiple of its finest level.
    pub fine_factor: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { steps: 64, ladder: vec![4, 8, 16, 32, 64, 128], fine_factor: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub tol_gap: f64,
    pub max_iters: usize,
    pub init: InitKind,
    pub mode: ControlMode,
    pub max_backtracks: usize,
    pub basis: Basis,
    pub refinement: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            tol_gap: d.tol_gap,
            max_iters: d.max_iters,
            init: d.init,
            mode: d.mode,
            max_backtracks: d.max_backtracks,
            basis: d.basis,
            refinement: d.refinement,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMetric {
    #[default]
    Value,
    Control,
    Both,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    pub metric: RateMetric,
    pub mode: StateMode,
    pub eps: EpsSchedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolderSection {
    pub p: u32,
}

impl Default for HolderSection {
    fn default() -> Self {
        Self { p: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub probes: usize,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self { probes: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

fn semantic(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

impl RunConfig {
    /// Parses and validates TOML text.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("parse error: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn check(&self) -> Result<(), CliError> {
        match (&self.problem.builtin, &self.problem.custom) {
            (Some(name), None) => {
                if !BUILTIN_NAMES.contains(&name.as_str()) {
                    return Err(semantic(
                        "problem.builtin",
                        format!("unknown problem '{name}' (known: {})", BUILTIN_NAMES.join(", ")),
                    ));
                }
            }
            (None, Some(c)) => c.check()?,
            _ => return Err(semantic("problem", "give exactly one of `builtin` or `custom`")),
        }
        let g = &self.grid;
        if g.steps == 0 {
            return Err(semantic("grid.steps", "must be positive"));
        }
        if g.ladder.is_empty() || g.ladder[0] == 0 {
            return Err(semantic("grid.ladder", "must be a nonempty list of positive step counts"));
        }
        if g.ladder.windows(2).any(|w| w[1] <= w[0] || w[1] % w[0] != 0) {
            return Err(semantic("grid.ladder", "must be strictly refining (each entry divides the next)"));
        }
        if g.fine_factor == 0 {
            return Err(semantic("grid.fine_factor", "must be positive"));
        }
        if self.particles < 2 {
            return Err(semantic("particles", "must be at least 2"));
        }
        if self.seeds.is_empty() {
            return Err(semantic("seeds", "must list at least one seed"));
        }
        if self.threads == Some(0) {
            return Err(semantic("threads", "must be positive"));
        }
        self.optimizer_config().check().map_err(|e| semantic("optimizer", e))?;
        self.fbsde.check().map_err(|e| semantic("fbsde", e))?;
        if let StateMode::Continuous { refinement: 0 } = self.rates.mode {
            return Err(semantic("rates.mode.refinement", "must be positive"));
        }
        if let EpsSchedule::Fixed(e) = self.rates.eps {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(semantic("rates.eps", "fixed value must be finite and nonnegative"));
            }
        }
        if self.holder.p == 0 {
            return Err(semantic("holder.p", "must be positive"));
        }
        if self.validate.probes == 0 {
            return Err(semantic("validate.probes", "must be positive"));
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let o = &self.optimizer;
        OptimizerConfig {
            tol_gap: o.tol_gap,
            max_iters: o.max_iters,
            init: o.init,
            mode: o.mode,
            max_backtracks: o.max_backtracks,
            basis: o.basis,
            refinement: o.refinement,
            fbsde: self.fbsde.clone(),
        }
    }

    pub fn spec(&self) -> Result<ProblemSpec, CliError> {
        match (&self.problem.builtin, &self.problem.custom) {
            (Some(name), _) => by_name(name).map_err(|e| semantic("problem.builtin", e)),
            (None, Some(c)) => Ok(c.spec()),
            (None, None) => Err(semantic("problem", "missing")),
        }
    }
}

impl CustomProblem {
    fn check(&self) -> Result<(), CliError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(semantic("problem.custom.horizon", "must be positive and finite"));
        }
        let d = &self.dynamics;
        let r = &self.running;
        let t = &self.terminal;
        let all = [
            d.b0, d.b1, d.b2, d.beta_x, d.beta_a, d.sigma0, d.sigma1, d.sigma2, r.qx, r.qm, r.q, r.qbar, r.r, r.c,
            r.soft, r.x_target, t.gx, t.gm, t.target,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(semantic("problem.custom", "coefficients must be finite"));
        }
        if let ActionSection::Box { lo, hi } = self.action {
            if !(lo <= hi) {
                return Err(semantic("problem.custom.action", "needs lo <= hi"));
            }
        }
        if let InitialSection::Gaussian { std, .. } = self.initial {
            if !(std >= 0.0) {
                return Err(semantic("problem.custom.initial.std", "must be nonnegative"));
            }
        }
        if self.lq {
            if r.soft != 0.0 || r.x_target != 0.0 {
                return Err(semantic("problem.custom.lq", "LQ problems need soft = 0 and x_target = 0"));
            }
            if self.action != ActionSection::Full {
                return Err(semantic("problem.custom.lq", "LQ problems need the full action set"));
            }
            if self.feedback.is_some() {
                return Err(semantic("problem.custom.feedback", "LQ problems use the closed-form feedback"));
            }
        }
        Ok(())
    }

    fn spec(&self) -> ProblemSpec {
        let c = TimeFn::Const;
        let d = &self.dynamics;
        let r = &self.running;
        let initial = match self.initial {
            InitialSection::Dirac { value } => InitialLaw::Dirac(vec![value]),
            InitialSection::Gaussian { mean, std } => InitialLaw::Gaussian { mean: vec![mean], std: vec![std] },
        };
        let terminal = QuadraticTerminal { gx: self.terminal.gx, gm: self.terminal.gm, target: self.terminal.target };
        if self.lq {
            let coeffs = LqCoefficients {
                q: c(r.q),
                qbar: c(r.qbar),
                r: c(r.r),
                c: c(r.c),
                b2: c(d.b2),
                gamma: c(d.beta_a),
                beta: c(d.beta_x),
                b1: c(d.b1),
                b0: c(d.b0),
                sigma0: c(d.sigma0),
                sigma1: c(d.sigma1),
                sigma2: c(d.sigma2),
                qx: c(r.qx),
                qm: c(r.qm),
            };
            let mut spec = lq1d(coeffs, terminal, self.horizon, initial);
            spec.name = "custom-lq".into();
            return spec;
        }
        let dynamics = LinearDynamics::scalar(
            self.horizon,
            &ScalarDynamics {
                b0: c(d.b0),
                b1: c(d.b1),
                b2: c(d.b2),
                beta_x: c(d.beta_x),
                beta_a: c(d.beta_a),
                sigma0: c(d.sigma0),
                sigma1: c(d.sigma1),
                sigma2: c(d.sigma2),
            },
        );
        let running = QuadraticCost {
            qx: c(r.qx),
            qm: c(r.qm),
            q: c(r.q),
            qbar: c(r.qbar),
            r: c(r.r),
            c: c(r.c),
            soft: c(r.soft),
            x_target: c(r.x_target),
        };
        let action = match self.action {
            ActionSection::Full => ActionSet::full(1),
            ActionSection::Box { lo, hi } => ActionSet::Box { lo: vec![lo], hi: vec![hi] },
        };
        quadratic_problem("custom", ProblemKind::Custom, dynamics, running, terminal, action, initial, self.feedback)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::parse("[problem]\nbuiltin = \"lq1d\"\n").unwrap();
        assert_eq!(cfg.particles, 100_000);
        assert_eq!(cfg.seeds, vec![1]);
        assert_eq!(cfg.grid, GridConfig::default());
        assert_eq!(cfg.optimizer_config(), OptimizerConfig::default());
        assert_eq!(cfg.fbsde, PicardConfig::default());
        assert_eq!(cfg.holder.p, 2);
        assert_eq!(cfg.output.dir, PathBuf::from("out"));
        assert_eq!(cfg.spec().unwrap().name, "lq1d");
    }

    #[test]
    fn non_refining_ladder_names_the_key() {
        let err = RunConfig::parse("[problem]\nbuiltin = \"lq1d\"\n[grid]\nladder = [8, 4]\n").unwrap_err();
        assert!(err.to_string().contains("grid.ladder"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = RunConfig::parse("[problem]\nbuiltin = \"lq1d\"\n[optimizer]\ntol_gapp = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("tol_gapp"), "{err}");
        let err = RunConfig::parse("partciles = 3\n[problem]\nbuiltin = \"lq1d\"\n").unwrap_err();
        assert!(err.to_string().contains("partciles"), "{err}");
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = RunConfig::parse("[problem]\nbuiltin = \n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn problem_must_be_unambiguous() {
        assert!(RunConfig::parse("[problem]\n").is_err());
        assert!(RunConfig::parse("[problem]\nbuiltin = \"nope\"\n").is_err());
        let both = "[problem]\nbuiltin = \"lq1d\"\n[problem.custom]\nlq = true\n";
        assert!(RunConfig::parse(both).is_err());
    }

    #[test]
    fn custom_lq_matches_builtin() {
        let text = r#"
[problem.custom]
lq = true
[problem.custom.dynamics]
b2 = 1.0
sigma0 = 1.0
[problem.custom.running]
qx = 1.0
q = 1.0
[problem.custom.terminal]
gx = 1.0
"#;
        let spec = RunConfig::parse(text).unwrap().spec().unwrap();
        let lq = spec.lq.as_ref().unwrap();
        let plain = mfc_core::model::builtin::plain_lq();
        assert_eq!(lq.coeffs.at(0.3), plain.lq.as_ref().unwrap().coeffs.at(0.3));
    }

    fn arb_custom() -> impl Strategy<Value = CustomProblem> {
        (0.5f64..3.0, prop::array::uniform8(-1.0f64..1.0), 0.1f64..2.0, any::<bool>(), -1.0f64..1.0).prop_map(
            |(horizon, d, q, gaussian, x0)| CustomProblem {
                horizon,
                lq: false,
                feedback: Some(FeedbackKind::ModifiedHamiltonian),
                dynamics: DynamicsSection {
                    b0: d[0],
                    b1: d[1],
                    b2: d[2],
                    beta_x: d[3],
                    beta_a: d[4],
                    sigma0: d[5],
                    sigma1: d[6],
                    sigma2: d[7],
                },
                running: RunningSection { qx: 1.0, q, soft: 0.1, ..Default::default() },
                terminal: TerminalSection { gx: 1.0, ..Default::default() },
                action: if gaussian { ActionSection::Box { lo: -1.0, hi: 2.0 } } else { ActionSection::Full },
                initial: if gaussian {
                    InitialSection::Gaussian { mean: x0, std: 0.3 }
                } else {
                    InitialSection::Dirac { value: x0 }
                },
            },
        )
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        let problem = prop_oneof![
            prop::sample::select(BUILTIN_NAMES.to_vec())
                .prop_map(|n| ProblemConfig { builtin: Some(n.to_string()), custom: None }),
            arb_custom().prop_map(|c| ProblemConfig { builtin: None, custom: Some(c) }),
        ];
        (
            problem,
            1usize..5,
            2usize..6,
            1usize..4,
            2usize..1_000_000,
            prop::collection::vec(any::<u64>(), 1..4),
            prop::option::of(1usize..8),
            1e-12f64..1e-2,
            any::<bool>(),
            (1usize..5, 1u32..5),
        )
            .prop_map(|(problem, base, levels, ff, particles, seeds, threads, tol, common, (r, p))| RunConfig {
                problem,
                grid: GridConfig { steps: 1 << levels, ladder: (0..levels).map(|j| base << j).collect(), fine_factor: ff },
                particles,
                seeds,
                threads,
                optimizer: OptimizerSection {
                    tol_gap: tol,
                    mode: if common { ControlMode::Common } else { ControlMode::PerParticle },
                    ..Default::default()
                },
                fbsde: PicardConfig { damping: 0.7, ..Default::default() },
                rates: RatesSection {
                    metric: if common { RateMetric::Both } else { RateMetric::Control },
                    mode: StateMode::Continuous { refinement: r },
                    eps: if common { EpsSchedule::Fixed(tol) } else { EpsSchedule::SqrtMesh },
                },
                holder: HolderSection { p },
                validate: ValidateSection { probes: 10 * r },
                output: OutputSection { dir: PathBuf::from(format!("out-{p}")) },
            })
    }

    proptest! {
        #[test]
        fn serialised_configs_reparse_equal(cfg in arb_config()) {
            cfg.check().unwrap();
            let text = cfg.to_toml();
            let back = RunConfig::parse(&text).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
