use serde::{Deserialize, Serialize};

use crate::error::{MfcError, Result};

/// Time grid `0 = t_0 < ... < t_N = T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    grid: Vec<f64>,
}

impl Partition {
    pub fn new(grid: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(MfcError::config("partition needs at least one interval"));
        }
        if grid[0] != 0.0 {
            return Err(MfcError::config("partition must start at 0"));
        }
        if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MfcError::config("partition times must be finite and strictly increasing"));
        }
        Ok(Self { grid })
    }

    /// `n` equal intervals of `[0, horizon]`. Knots are `horizon * (i / n)`, so
    /// the knots of a uniform grid reappear bit-exactly in its uniform refinements.
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if n == 0 || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(MfcError::config("uniform partition needs n >= 1 and a positive horizon"));
        }
        let mut grid: Vec<f64> = (0..=n).map(|i| horizon * (i as f64 / n as f64)).collect();
        grid[n] = horizon;
        Self::new(grid)
    }

    pub fn times(&self) -> &[f64] {
        &self.grid
    }
    pub fn intervals(&self) -> usize {
        self.grid.len() - 1
    }
    pub fn horizon(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }
    pub fn t(&self, i: usize) -> f64 {
        self.grid[i]
    }
    pub fn h(&self, i: usize) -> f64 {
        self.grid[i + 1] - self.grid[i]
    }
    pub fn mesh(&self) -> f64 {
        self.grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Every interval split into `r` equal parts; the original knots are kept exactly.
    pub fn refine(&self, r: usize) -> Result<Partition> {
        if r == 0 {
            return Err(MfcError::config("refinement factor must be at least 1"));
        }
        if r == 1 {
            return Ok(self.clone());
        }
        let mut grid = Vec::with_capacity(self.intervals() * r + 1);
        for w in self.grid.windows(2) {
            for j in 0..r {
                grid.push(if j == 0 { w[0] } else { w[0] + (w[1] - w[0]) * (j as f64 / r as f64) });
            }
        }
        grid.push(self.horizon());
        Partition::new(grid)
    }

    /// For each knot of `coarse`, its index in `self`; errors unless `self` refines `coarse`.
    pub fn refinement_map(&self, coarse: &Partition) -> Result<Vec<usize>> {
        let tol = 1e-12 * self.horizon();
        if (self.horizon() - coarse.horizon()).abs() > tol {
            return Err(MfcError::config("partitions have different horizons"));
        }
        let mut out = Vec::with_capacity(coarse.grid.len());
        let mut j = 0;
        for &t in &coarse.grid {
            while j < self.grid.len() && self.grid[j] < t - tol {
                j += 1;
            }
            if j == self.grid.len() || (self.grid[j] - t).abs() > tol {
                return Err(MfcError::config(format!(
                    "coarse knot {t} is not a knot of the fine partition"
                )));
            }
            out.push(j);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refine_keeps_knots() {
        let c = Partition::new(vec![0.0, 0.3, 1.0]).unwrap();
        let f = c.refine(4).unwrap();
        assert_eq!(f.intervals(), 8);
        assert_eq!(f.refinement_map(&c).unwrap(), vec![0, 4, 8]);
        assert!((f.h(5) - 0.175).abs() < 1e-15);
        assert_eq!(c.refine(1).unwrap(), c);
        assert!(c.refine(0).is_err());
    }

    #[test]
    fn uniform_knots_nest() {
        let c = Partition::uniform(0.7, 3).unwrap();
        let f = Partition::uniform(0.7, 12).unwrap();
        assert_eq!(f.refinement_map(&c).unwrap(), vec![0, 4, 8, 12]);
        assert_eq!(f.t(4), c.t(1));
    }

    #[test]
    fn invalid_grids() {
        assert!(Partition::new(vec![0.0]).is_err());
        assert!(Partition::new(vec![0.1, 1.0]).is_err());
        assert!(Partition::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn mesh_is_largest_gap() {
        let p = Partition::new(vec![0.0, 0.1, 0.5, 1.0]).unwrap();
        assert_eq!(p.mesh(), 0.5);
        assert!(Partition::uniform(1.0, 3).unwrap().refinement_map(&p).is_err());
    }
}
