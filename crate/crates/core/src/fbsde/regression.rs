use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MfcError, Result};
use crate::reduce::{row_mean, tree_sum_vec};

/// Regression features of a state vector, on top of the constant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    /// `x`
    #[default]
    Affine,
    /// `x` and `x ⊙ x`
    Quadratic,
}

impl Basis {
    pub fn features(self, n: usize) -> usize {
        match self {
            Basis::Affine => n,
            Basis::Quadratic => 2 * n,
        }
    }

    #[inline]
    pub fn eval(self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        out[..n].copy_from_slice(x);
        if self == Basis::Quadratic {
            for j in 0..n {
                out[n + j] = x[j] * x[j];
            }
        }
    }
}

/// Least-squares fit `target ≈ intercept + slopes · basis(x)` in raw polynomial form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub basis: Basis,
    /// Input (state) dimension.
    pub n: usize,
    /// Output dimension.
    pub q: usize,
    /// `(1 + p) × q` row-major; row 0 is the intercept.
    pub coef: Vec<f64>,
    /// Standard errors, same layout as `coef`. Dropped features get 0.
    pub se: Vec<f64>,
}

const MAX_FEATURES: usize = 32;

impl LinearFit {
    pub fn zero(basis: Basis, n: usize, q: usize) -> Self {
        let rows = 1 + basis.features(n);
        Self { basis, n, q, coef: vec![0.0; rows * q], se: vec![0.0; rows * q] }
    }

    pub fn features(&self) -> usize {
        self.basis.features(self.n)
    }

    pub fn intercept(&self) -> &[f64] {
        &self.coef[..self.q]
    }

    /// Coefficient of feature `j` (0-based, excluding the constant) on output `o`.
    pub fn slope(&self, j: usize, o: usize) -> f64 {
        self.coef[(1 + j) * self.q + o]
    }

    pub fn slope_se(&self, j: usize, o: usize) -> f64 {
        self.se[(1 + j) * self.q + o]
    }

    pub fn predict(&self, x: &[f64], out: &mut [f64]) {
        let (n, q) = (self.n, self.q);
        out.copy_from_slice(&self.coef[..q]);
        for j in 0..n {
            let row = &self.coef[(1 + j) * q..(2 + j) * q];
            for (o, c) in out.iter_mut().zip(row) {
                *o += c * x[j];
            }
        }
        if self.basis == Basis::Quadratic {
            for j in 0..n {
                let row = &self.coef[(1 + n + j) * q..(2 + n + j) * q];
                let x2 = x[j] * x[j];
                for (o, c) in out.iter_mut().zip(row) {
                    *o += c * x2;
                }
            }
        }
    }

    /// Jacobian of the prediction in `x`, row-major `q × n`.
    pub fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let (n, q) = (self.n, self.q);
        for o in 0..q {
            for j in 0..n {
                let mut v = self.slope(j, o);
                if self.basis == Basis::Quadratic {
                    v += 2.0 * self.slope(n + j, o) * x[j];
                }
                out[o * n + j] = v;
            }
        }
    }

    /// Predictions at every row of `xs` (`M × n`), row-major `M × q`.
    pub fn predict_cloud(&self, xs: &[f64]) -> Vec<f64> {
        use rayon::prelude::*;
        let m = xs.len() / self.n;
        let mut out = vec![0.0; m * self.q];
        out.par_chunks_mut(self.q).enumerate().with_min_len(256).for_each(|(i, o)| self.predict(&xs[i * self.n..(i + 1) * self.n], o));
        out
    }

    /// `theta * self + (1 - theta) * old`, coefficient-wise. Errors are taken from `self`.
    pub fn blend(&self, old: &LinearFit, theta: f64) -> LinearFit {
        let mut out = self.clone();
        for (c, o) in out.coef.iter_mut().zip(&old.coef) {
            *c = theta * *c + (1.0 - theta) * o;
        }
        out
    }
}

/// Least-squares regression of `targets` (`M × q`) on `basis(xs)` (`M × n`).
///
/// Features with zero sample variance are dropped (slope 0). Any other rank
/// deficiency is reported as a regression error at `time_index`.
pub fn fit(basis: Basis, n: usize, xs: &[f64], targets: &[f64], q: usize, time_index: usize) -> Result<LinearFit> {
    let m = xs.len() / n.max(1);
    let p = basis.features(n);
    if p > MAX_FEATURES {
        return Err(MfcError::config(format!("regression basis has {p} features, at most {MAX_FEATURES} supported")));
    }
    if xs.len() != m * n || targets.len() != m * q {
        return Err(MfcError::config("regression: states and targets have different particle counts"));
    }
    if m < p + 2 {
        return Err(MfcError::InsufficientData(format!("{m} particles cannot fit {p} features at time index {time_index}")));
    }
    let mut fm = vec![0.0; m * p];
    {
        use rayon::prelude::*;
        fm.par_chunks_mut(p.max(1)).enumerate().with_min_len(256).for_each(|(i, f)| basis.eval(&xs[i * n..(i + 1) * n], f));
    }
    let fmean = row_mean(&fm, p);
    let ymean = row_mean(targets, q);

    // Centered cross products: p×p block then p×q block.
    let sums = tree_sum_vec(m, p * p + p * q, |i, acc| {
        let f = &fm[i * p..(i + 1) * p];
        let y = &targets[i * q..(i + 1) * q];
        for a in 0..p {
            let fa = f[a] - fmean[a];
            for b in a..p {
                acc[a * p + b] += fa * (f[b] - fmean[b]);
            }
            for o in 0..q {
                acc[p * p + a * q + o] += fa * (y[o] - ymean[o]);
            }
        }
    });

    let keep: Vec<usize> = (0..p)
        .filter(|&j| {
            let var = sums[j * p + j] / m as f64;
            var > (1e-12 * (1.0 + fmean[j].abs())).powi(2)
        })
        .collect();
    let r = keep.len();

    let mut coef = vec![0.0; (1 + p) * q];
    let mut se = vec![0.0; (1 + p) * q];
    let mut inv_diag = vec![0.0; r];
    if r > 0 {
        // Scale to unit diagonal so the conditioning test is scale free.
        let scale: Vec<f64> = keep.iter().map(|&j| sums[j * p + j].sqrt()).collect();
        let sff = DMatrix::from_fn(r, r, |a, b| {
            let (ja, jb) = (keep[a].min(keep[b]), keep[a].max(keep[b]));
            sums[ja * p + jb] / (scale[a] * scale[b])
        });
        let chol = sff.clone().cholesky().ok_or_else(|| MfcError::Regression {
            time_index,
            reason: "normal matrix is not positive definite".into(),
        })?;
        let l = chol.l();
        let (lo, hi) = l.diagonal().iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if !(lo > 1e-6 * hi) {
            return Err(MfcError::Regression {
                time_index,
                reason: format!("basis features are collinear (pivot ratio {:.3e})", lo / hi),
            });
        }
        let inv = chol.inverse();
        for a in 0..r {
            inv_diag[a] = inv[(a, a)] / (scale[a] * scale[a]);
        }
        for o in 0..q {
            let rhs = DVector::from_fn(r, |a, _| sums[p * p + keep[a] * q + o] / scale[a]);
            let beta = chol.solve(&rhs);
            for a in 0..r {
                coef[(1 + keep[a]) * q + o] = beta[a] / scale[a];
            }
        }
    }
    for o in 0..q {
        let mut c0 = ymean[o];
        for j in 0..p {
            c0 -= coef[(1 + j) * q + o] * fmean[j];
        }
        coef[o] = c0;
    }

    // Residual variances for the standard errors.
    let rss = tree_sum_vec(m, q, |i, acc| {
        let f = &fm[i * p..(i + 1) * p];
        for o in 0..q {
            let mut pred = coef[o];
            for j in 0..p {
                pred += coef[(1 + j) * q + o] * f[j];
            }
            let e = targets[i * q + o] - pred;
            acc[o] += e * e;
        }
    });
    let dof = (m - r - 1) as f64;
    for o in 0..q {
        let s2 = rss[o] / dof;
        se[o] = (s2 / m as f64).sqrt();
        for (a, &j) in keep.iter().enumerate() {
            se[(1 + j) * q + o] = (s2 * inv_diag[a]).sqrt();
        }
    }
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(MfcError::Regression { time_index, reason: "non-finite coefficients".into() });
    }
    Ok(LinearFit { basis, n, q, coef, se })
}
