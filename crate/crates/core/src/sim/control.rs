use crate::error::{MfcError, Result};
use crate::model::{ActionSet, Partition};
use crate::reduce::tree_mean;

/// Piecewise-constant control: one value per (interval, particle), stored
/// interval-major as `values[(i * m + p) * k + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPath {
    partition: Partition,
    m: usize,
    k: usize,
    values: Vec<f64>,
}

impl ControlPath {
    pub fn new(partition: Partition, m: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 || k == 0 || values.len() != partition.intervals() * m * k {
            return Err(MfcError::config(format!(
                "control path needs {} values, got {}",
                partition.intervals() * m * k,
                values.len()
            )));
        }
        Ok(Self { partition, m, k, values })
    }

    pub fn zeros(partition: Partition, m: usize, k: usize) -> Self {
        let len = partition.intervals() * m * k;
        Self { partition, m, k, values: vec![0.0; len] }
    }

    /// Same value for every interval and particle.
    pub fn constant(partition: Partition, m: usize, value: &[f64]) -> Self {
        let values = value.repeat(partition.intervals() * m);
        Self { partition, m, k: value.len(), values }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }
    pub fn particles(&self) -> usize {
        self.m
    }
    pub fn dim(&self) -> usize {
        self.k
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Controls of all particles on interval `i`, row-major `m × k`.
    pub fn interval(&self, i: usize) -> &[f64] {
        let w = self.m * self.k;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn interval_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.m * self.k;
        &mut self.values[i * w..(i + 1) * w]
    }

    pub fn project_into(&mut self, action: &ActionSet) {
        action.project_rows(&mut self.values);
    }

    pub fn all_in(&self, action: &ActionSet) -> bool {
        self.values.chunks(self.k).all(|v| action.contains(v))
    }

    /// The same control on a finer partition, held constant across sub-intervals.
    pub fn embed(&self, fine: &Partition) -> Result<ControlPath> {
        let map = fine.refinement_map(&self.partition)?;
        let w = self.m * self.k;
        let mut values = Vec::with_capacity(fine.intervals() * w);
        for i in 0..self.partition.intervals() {
            for _ in map[i]..map[i + 1] {
                values.extend_from_slice(self.interval(i));
            }
        }
        ControlPath::new(fine.clone(), self.m, self.k, values)
    }
}

/// Left-endpoint coarsening: each coarse interval takes the fine value at its start.
pub fn project_control_to_partition(alpha_fine: &ControlPath, coarse: &Partition) -> Result<ControlPath> {
    let map = alpha_fine.partition.refinement_map(coarse)?;
    let mut values = Vec::with_capacity(coarse.intervals() * alpha_fine.m * alpha_fine.k);
    for &j in &map[..map.len() - 1] {
        values.extend_from_slice(alpha_fine.interval(j));
    }
    ControlPath::new(coarse.clone(), alpha_fine.m, alpha_fine.k, values)
}

/// `sqrt(mean over particles of sum_i |a_i - b_i|^2 h_i)`.
pub fn h2_distance(a: &ControlPath, b: &ControlPath) -> Result<f64> {
    if a.partition != b.partition || a.m != b.m || a.k != b.k {
        return Err(MfcError::config("H2 distance needs control paths of identical shape"));
    }
    let per = h2_per_particle(a, b);
    Ok(tree_mean(a.m, |p| per[p]).sqrt())
}

/// Per-particle squared distances `sum_i |a_i - b_i|^2 h_i`.
pub fn h2_per_particle(a: &ControlPath, b: &ControlPath) -> Vec<f64> {
    let (m, k) = (a.m, a.k);
    let mut per = vec![0.0; m];
    for i in 0..a.partition.intervals() {
        let h = a.partition.h(i);
        let (ai, bi) = (a.interval(i), b.interval(i));
        for (p, acc) in per.iter_mut().enumerate() {
            let mut s = 0.0;
            for c in 0..k {
                let d = ai[p * k + c] - bi[p * k + c];
                s += d * d;
            }
            *acc += s * h;
        }
    }
    per
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarsening_takes_left_values() {
        let fine = Partition::uniform(1.0, 4).unwrap();
        let path = ControlPath::new(fine, 1, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let coarse = project_control_to_partition(&path, &Partition::uniform(1.0, 2).unwrap()).unwrap();
        assert_eq!(coarse.values(), &[1.0, 3.0]);
        let same = project_control_to_partition(&path, path.partition()).unwrap();
        assert_eq!(same, path);
    }

    #[test]
    fn embedding_changes_only_at_coarse_knots() {
        let coarse = ControlPath::new(Partition::uniform(1.0, 2).unwrap(), 2, 1, vec![1.0, -1.0, 5.0, 7.0]).unwrap();
        let fine = coarse.embed(&Partition::uniform(1.0, 8).unwrap()).unwrap();
        for i in 0..8 {
            let want = if i < 4 { [1.0, -1.0] } else { [5.0, 7.0] };
            assert_eq!(fine.interval(i), &want);
        }
        assert!(coarse.embed(&Partition::uniform(1.0, 3).unwrap()).is_err());
    }

    #[test]
    fn constant_offset_distance() {
        let part = Partition::uniform(2.0, 5).unwrap();
        let a = ControlPath::zeros(part.clone(), 3, 1);
        let b = ControlPath::constant(part, 3, &[0.5]);
        assert!((h2_distance(&a, &b).unwrap() - 0.5 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(h2_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn distance_matches_double_loop() {
        let part = Partition::new(vec![0.0, 0.1, 0.45, 1.0]).unwrap();
        let (m, k) = (4, 2);
        let va: Vec<f64> = (0..3 * m * k).map(|i| ((i * 7 % 11) as f64 * 0.3).sin()).collect();
        let vb: Vec<f64> = (0..3 * m * k).map(|i| ((i * 5 % 13) as f64 * 0.2).cos()).collect();
        let a = ControlPath::new(part.clone(), m, k, va.clone()).unwrap();
        let b = ControlPath::new(part.clone(), m, k, vb.clone()).unwrap();
        let mut brute = 0.0;
        for p in 0..m {
            for i in 0..3 {
                for c in 0..k {
                    let idx = (i * m + p) * k + c;
                    brute += (va[idx] - vb[idx]).powi(2) * part.h(i);
                }
            }
        }
        let brute = (brute / m as f64).sqrt();
        assert!((h2_distance(&a, &b).unwrap() - brute).abs() < 1e-14);
    }
}
