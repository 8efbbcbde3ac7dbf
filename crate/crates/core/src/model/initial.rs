use serde::{Deserialize, Serialize};

use crate::error::{MfcError, Result};
use crate::sim::BrownianStore;

/// Law of the initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitialLaw {
    Dirac(Vec<f64>),
    /// Independent coordinates with the given means and standard deviations.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Dirac(x) => x.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            InitialLaw::Dirac(x) if x.iter().all(|v| v.is_finite()) && !x.is_empty() => Ok(()),
            InitialLaw::Gaussian { mean, std }
                if mean.len() == std.len()
                    && !mean.is_empty()
                    && mean.iter().all(|v| v.is_finite())
                    && std.iter().all(|s| *s >= 0.0 && s.is_finite()) =>
            {
                Ok(())
            }
            _ => Err(MfcError::config("initial law needs finite parameters and std >= 0")),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            InitialLaw::Dirac(x) => x.clone(),
            InitialLaw::Gaussian { mean, .. } => mean.clone(),
        }
    }

    /// Per-coordinate variances.
    pub fn variance(&self) -> Vec<f64> {
        match self {
            InitialLaw::Dirac(x) => vec![0.0; x.len()],
            InitialLaw::Gaussian { std, .. } => std.iter().map(|s| s * s).collect(),
        }
    }

    /// Draws the initial state of `particle`; the draw depends only on the
    /// store's seed and the particle index.
    pub fn sample_into(&self, store: &BrownianStore, particle: usize, out: &mut [f64]) {
        match self {
            InitialLaw::Dirac(x) => out.copy_from_slice(x),
            InitialLaw::Gaussian { mean, std } => {
                store.initial_normals(particle, out);
                for ((o, m), s) in out.iter_mut().zip(mean).zip(std) {
                    *o = m + s * *o;
                }
            }
        }
    }

    /// Draws `m` particles, row-major.
    pub fn sample(&self, store: &BrownianStore, m: usize) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; m * n];
        for (p, row) in out.chunks_mut(n).enumerate() {
            self.sample_into(store, p, row);
        }
        out
    }

    /// `E|xi|^p` for even `p <= 8`.
    pub fn moment(&self, p: u32) -> Result<f64> {
        if p % 2 != 0 || p > 8 {
            return Err(MfcError::config(format!("moment of order {p} is not available (even p <= 8 only)")));
        }
        let half = (p / 2) as usize;
        let (mean, std) = match self {
            InitialLaw::Dirac(x) => (x.clone(), vec![0.0; x.len()]),
            InitialLaw::Gaussian { mean, std } => (mean.clone(), std.clone()),
        };
        // Moments of |xi|^2 = sum of independent squares, by convolving the
        // moment sequences of each coordinate's square.
        let mut total = vec![0.0; half + 1];
        total[0] = 1.0;
        for (m, s) in mean.iter().zip(&std) {
            let coord: Vec<f64> = (0..=half).map(|j| gaussian_raw_moment(*m, *s, 2 * j)).collect();
            let mut next = vec![0.0; half + 1];
            for (j, nj) in next.iter_mut().enumerate() {
                for i in 0..=j {
                    *nj += binomial(j, i) * total[i] * coord[j - i];
                }
            }
            total = next;
        }
        Ok(total[half])
    }

    /// `(E|xi|^p)^(1/p)`.
    pub fn lp_norm(&self, p: u32) -> Result<f64> {
        Ok(self.moment(p)?.powf(1.0 / p as f64))
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn double_factorial_odd(l: usize) -> f64 {
    // (2l - 1)!!
    (1..=l).fold(1.0, |acc, i| acc * (2 * i - 1) as f64)
}

/// `E[X^q]` for `X ~ N(m, s^2)`.
fn gaussian_raw_moment(m: f64, s: f64, q: usize) -> f64 {
    (0..=q / 2)
        .map(|l| binomial(q, 2 * l) * m.powi((q - 2 * l) as i32) * s.powi(2 * l as i32) * double_factorial_odd(l))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_moments() {
        let law = InitialLaw::Gaussian { mean: vec![0.0], std: vec![1.0] };
        assert_eq!(law.moment(2).unwrap(), 1.0);
        assert_eq!(law.moment(4).unwrap(), 3.0);
        assert_eq!(law.moment(8).unwrap(), 105.0);
    }

    #[test]
    fn chi_square_two_dims() {
        // |xi|^2 ~ chi^2_2, E[(chi^2_2)^2] = 8.
        let law = InitialLaw::Gaussian { mean: vec![0.0, 0.0], std: vec![1.0, 1.0] };
        assert!((law.moment(4).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_moments_match_sampling() {
        let law = InitialLaw::Gaussian { mean: vec![0.5], std: vec![0.3] };
        let store = BrownianStore::new(3, 1.0, 1, 1).unwrap();
        let xs = law.sample(&store, 200_000);
        let mc = xs.iter().map(|x| x.powi(4)).sum::<f64>() / xs.len() as f64;
        let exact = law.moment(4).unwrap();
        assert!((mc - exact).abs() < 0.01 * exact, "{mc} vs {exact}");
    }

    #[test]
    fn dirac_moment_and_odd_order() {
        let law = InitialLaw::Dirac(vec![2.0]);
        assert_eq!(law.moment(2).unwrap(), 4.0);
        assert!(law.moment(3).is_err());
    }
}
