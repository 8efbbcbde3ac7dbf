use serde::{Deserialize, Serialize};

use crate::error::{MfcError, Result};

/// Closed convex action set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionSet {
    Full { dim: usize },
    /// Coordinatewise bounds; infinite bounds are allowed.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl ActionSet {
    pub fn full(dim: usize) -> Self {
        ActionSet::Full { dim }
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(MfcError::config("box bounds must have equal length with lo <= hi"));
        }
        Ok(ActionSet::Box { lo, hi })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || !(radius >= 0.0 && radius.is_finite()) {
            return Err(MfcError::config("ball needs a center and a finite nonnegative radius"));
        }
        Ok(ActionSet::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            ActionSet::Full { dim } => *dim,
            ActionSet::Box { lo, .. } => lo.len(),
            ActionSet::Ball { center, .. } => center.len(),
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self, ActionSet::Full { .. })
    }

    /// Radius of a centered ball containing the set, when it is bounded.
    pub fn bound_radius(&self) -> Option<f64> {
        match self {
            ActionSet::Full { .. } => None,
            ActionSet::Box { lo, hi } => {
                let r2: f64 = lo.iter().zip(hi).map(|(l, h)| l.abs().max(h.abs()).powi(2)).sum();
                r2.is_finite().then(|| r2.sqrt())
            }
            ActionSet::Ball { center, radius } => {
                Some(center.iter().map(|c| c * c).sum::<f64>().sqrt() + radius)
            }
        }
    }

    pub fn is_compact(&self) -> bool {
        self.bound_radius().is_some()
    }

    /// Euclidean projection, in place.
    pub fn project(&self, v: &mut [f64]) {
        match self {
            ActionSet::Full { .. } => {}
            ActionSet::Box { lo, hi } => {
                for ((x, l), h) in v.iter_mut().zip(lo).zip(hi) {
                    *x = x.clamp(*l, *h);
                }
            }
            ActionSet::Ball { center, radius } => {
                let dist = ball_dist(v, center);
                if dist <= *radius {
                    return;
                }
                let mut scale = radius / dist;
                let orig: Vec<f64> = v.to_vec();
                loop {
                    for ((x, o), c) in v.iter_mut().zip(&orig).zip(center) {
                        *x = c + (o - c) * scale;
                    }
                    // Rounding can leave the point a hair outside; shrink until
                    // it is inside so a second projection is a no-op.
                    if ball_dist(v, center) <= *radius {
                        break;
                    }
                    scale *= 1.0 - 1e-15;
                }
            }
        }
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        match self {
            ActionSet::Full { .. } => v.iter().all(|x| x.is_finite()),
            ActionSet::Box { lo, hi } => v.iter().zip(lo).zip(hi).all(|((x, l), h)| l <= x && x <= h),
            ActionSet::Ball { center, radius } => ball_dist(v, center) <= *radius,
        }
    }

    /// Projects every row of a row-major `m × dim` array.
    pub fn project_rows(&self, rows: &mut [f64]) {
        if self.is_full() {
            return;
        }
        for row in rows.chunks_mut(self.dim()) {
            self.project(row);
        }
    }
}

fn ball_dist(v: &[f64], center: &[f64]) -> f64 {
    v.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sets() -> Vec<ActionSet> {
        vec![
            ActionSet::full(2),
            ActionSet::boxed(vec![-1.0, 0.0], vec![1.0, f64::INFINITY]).unwrap(),
            ActionSet::ball(vec![0.3, -0.2], 0.7).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(x in -5.0..5.0f64, y in -5.0..5.0f64) {
            for s in sets() {
                let mut v = [x, y];
                s.project(&mut v);
                let mut w = v;
                s.project(&mut w);
                prop_assert_eq!(v, w);
                prop_assert!(s.contains(&v));
            }
        }

        #[test]
        fn projection_is_nonexpansive(a in prop::array::uniform4(-5.0..5.0f64)) {
            for s in sets() {
                let (mut u, mut v) = ([a[0], a[1]], [a[2], a[3]]);
                let before = ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)).sqrt();
                s.project(&mut u);
                s.project(&mut v);
                let after = ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)).sqrt();
                prop_assert!(after <= before + 1e-12);
            }
        }
    }

    #[test]
    fn half_line_projection() {
        let s = ActionSet::boxed(vec![0.0], vec![f64::INFINITY]).unwrap();
        let mut v = [-1.0];
        s.project(&mut v);
        assert_eq!(v, [0.0]);
        assert!(!s.is_compact());
    }

    #[test]
    fn bound_radius_of_box() {
        let s = ActionSet::boxed(vec![-3.0], vec![4.0]).unwrap();
        assert_eq!(s.bound_radius(), Some(4.0));
    }
}
