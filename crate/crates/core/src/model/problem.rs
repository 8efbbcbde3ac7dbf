use crate::error::{MfcError, Result};
use crate::feedback::{FeedbackKind, LqCoefficients};
use crate::model::{ActionSet, CostModel, InitialLaw, LinearDynamics, QuadraticTerminal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Lq1d,
    Example1,
    Example2,
    Custom,
}

/// Scalar LQ data kept alongside an `lq1d` problem for the closed-form
/// feedback and the Riccati oracle.
#[derive(Clone, Debug)]
pub struct LqData {
    pub coeffs: LqCoefficients,
    pub terminal: QuadraticTerminal,
}

/// A linear-convex mean-field control problem.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub name: String,
    pub kind: ProblemKind,
    pub dynamics: LinearDynamics,
    pub cost: CostModel,
    pub action: ActionSet,
    pub initial_law: InitialLaw,
    /// Feedback construction for `custom` problems; built-in kinds imply theirs.
    pub feedback: Option<FeedbackKind>,
    pub lq: Option<LqData>,
}

impl ProblemSpec {
    pub fn horizon(&self) -> f64 {
        self.dynamics.horizon
    }
    pub fn n(&self) -> usize {
        self.dynamics.n
    }
    pub fn k(&self) -> usize {
        self.dynamics.k
    }
    pub fn d(&self) -> usize {
        self.dynamics.d
    }
    pub fn lambda(&self) -> f64 {
        self.cost.lambda1 + self.cost.lambda2
    }

    pub fn feedback_kind(&self) -> Option<FeedbackKind> {
        match self.kind {
            ProblemKind::Lq1d => Some(FeedbackKind::LqClosedForm),
            ProblemKind::Example1 => Some(FeedbackKind::ModifiedHamiltonian),
            ProblemKind::Example2 => Some(FeedbackKind::ExpectedHamiltonian),
            ProblemKind::Custom => self.feedback,
        }
    }

    /// Structural checks: dimensions agree and required side data is present.
    pub fn check(&self) -> Result<()> {
        let t = self.horizon();
        if !(t > 0.0 && t.is_finite()) {
            return Err(MfcError::config("horizon must be positive and finite"));
        }
        if self.n() == 0 || self.k() == 0 || self.d() == 0 {
            return Err(MfcError::config("dimensions n, k, d must be positive"));
        }
        self.dynamics.check_at(0.0)?;
        self.dynamics.check_at(t)?;
        if self.action.dim() != self.k() {
            return Err(MfcError::config(format!(
                "action set has dimension {}, control dimension is {}",
                self.action.dim(),
                self.k()
            )));
        }
        if self.initial_law.dim() != self.n() {
            return Err(MfcError::config(format!(
                "initial law has dimension {}, state dimension is {}",
                self.initial_law.dim(),
                self.n()
            )));
        }
        self.initial_law.check()?;
        let (l1, l2) = (self.cost.lambda1, self.cost.lambda2);
        if !(l1 >= 0.0 && l2 >= 0.0 && l1.is_finite() && l2.is_finite()) {
            return Err(MfcError::config("convexity moduli must be finite and nonnegative"));
        }
        if self.kind == ProblemKind::Lq1d {
            if (self.n(), self.k(), self.d()) != (1, 1, 1) {
                return Err(MfcError::config("lq1d problems are one-dimensional"));
            }
            let lq = self
                .lq
                .as_ref()
                .ok_or_else(|| MfcError::config("lq1d problem without LQ coefficients"))?;
            lq.coeffs.check(t)?;
        }
        if self.kind == ProblemKind::Custom && self.feedback == Some(FeedbackKind::LqClosedForm) && self.lq.is_none() {
            return Err(MfcError::config("closed-form LQ feedback needs LQ coefficients"));
        }
        Ok(())
    }
}
