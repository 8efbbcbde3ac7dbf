use nalgebra::{DMatrix, DVector};

use crate::error::{MfcError, Result};
use crate::time_fn::TimeFn;

pub type Mat = DMatrix<f64>;

/// Affine drift `b0 + b1 x + b2 a + beta_x xbar + beta_a abar` and diffusion
/// `sigma0 + sum_j x_j sigma1[j] + sum_j xbar_j sigma2[j]`.
///
/// `sigma1` and `sigma2` hold one `n × d` matrix per state coordinate.
#[derive(Clone, Debug)]
pub struct LinearDynamics {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub horizon: f64,
    pub b0: TimeFn<DVector<f64>>,
    pub b1: TimeFn<Mat>,
    pub b2: TimeFn<Mat>,
    pub beta_x: TimeFn<Mat>,
    pub beta_a: TimeFn<Mat>,
    pub sigma0: TimeFn<Mat>,
    pub sigma1: TimeFn<Vec<Mat>>,
    pub sigma2: TimeFn<Vec<Mat>>,
}

/// Scalar coefficients of a one-dimensional system.
#[derive(Clone, Debug)]
pub struct ScalarDynamics {
    pub b0: TimeFn<f64>,
    pub b1: TimeFn<f64>,
    pub b2: TimeFn<f64>,
    pub beta_x: TimeFn<f64>,
    pub beta_a: TimeFn<f64>,
    pub sigma0: TimeFn<f64>,
    pub sigma1: TimeFn<f64>,
    pub sigma2: TimeFn<f64>,
}

impl Default for ScalarDynamics {
    fn default() -> Self {
        let z = TimeFn::Const(0.0);
        Self {
            b0: z.clone(),
            b1: z.clone(),
            b2: z.clone(),
            beta_x: z.clone(),
            beta_a: z.clone(),
            sigma0: z.clone(),
            sigma1: z.clone(),
            sigma2: z,
        }
    }
}

fn m1(v: &f64) -> Mat {
    Mat::from_element(1, 1, *v)
}

impl LinearDynamics {
    pub fn zero(n: usize, k: usize, d: usize, horizon: f64) -> Self {
        Self {
            n,
            k,
            d,
            horizon,
            b0: TimeFn::Const(DVector::zeros(n)),
            b1: TimeFn::Const(Mat::zeros(n, n)),
            b2: TimeFn::Const(Mat::zeros(n, k)),
            beta_x: TimeFn::Const(Mat::zeros(n, n)),
            beta_a: TimeFn::Const(Mat::zeros(n, k)),
            sigma0: TimeFn::Const(Mat::zeros(n, d)),
            sigma1: TimeFn::Const(vec![Mat::zeros(n, d); n]),
            sigma2: TimeFn::Const(vec![Mat::zeros(n, d); n]),
        }
    }

    pub fn scalar(horizon: f64, c: &ScalarDynamics) -> Self {
        Self {
            n: 1,
            k: 1,
            d: 1,
            horizon,
            b0: c.b0.map(|v| DVector::from_element(1, *v)),
            b1: c.b1.map(m1),
            b2: c.b2.map(m1),
            beta_x: c.beta_x.map(m1),
            beta_a: c.beta_a.map(m1),
            sigma0: c.sigma0.map(m1),
            sigma1: c.sigma1.map(|v| vec![m1(v)]),
            sigma2: c.sigma2.map(|v| vec![m1(v)]),
        }
    }

    /// Freezes all coefficients at time `t`.
    pub fn at(&self, t: f64) -> DynamicsAt {
        let s1 = self.sigma1.at(t);
        let s2 = self.sigma2.at(t);
        let nonzero = |ms: &[Mat]| ms.iter().any(|m| m.iter().any(|v| *v != 0.0));
        DynamicsAt {
            n: self.n,
            k: self.k,
            d: self.d,
            b0: self.b0.at(t),
            b1: self.b1.at(t),
            b2: self.b2.at(t),
            beta_x: self.beta_x.at(t),
            beta_a: self.beta_a.at(t),
            sigma0: self.sigma0.at(t),
            state_noise: nonzero(&s1),
            mean_noise: nonzero(&s2),
            sigma1: s1,
            sigma2: s2,
        }
    }

    /// Checks shapes and finiteness at `t`.
    pub fn check_at(&self, t: f64) -> Result<()> {
        let c = self.at(t);
        let (n, k, d) = (self.n, self.k, self.d);
        let shapes = [
            ("b1", c.b1.shape(), (n, n)),
            ("b2", c.b2.shape(), (n, k)),
            ("beta_x", c.beta_x.shape(), (n, n)),
            ("beta_a", c.beta_a.shape(), (n, k)),
            ("sigma0", c.sigma0.shape(), (n, d)),
        ];
        if c.b0.len() != n {
            return Err(MfcError::config(format!("b0 has length {}, expected {n}", c.b0.len())));
        }
        for (name, got, want) in shapes {
            if got != want {
                return Err(MfcError::config(format!("{name} has shape {got:?}, expected {want:?}")));
            }
        }
        for (name, maps) in [("sigma1", &c.sigma1), ("sigma2", &c.sigma2)] {
            if maps.len() != n || maps.iter().any(|m| m.shape() != (n, d)) {
                return Err(MfcError::config(format!("{name} must hold {n} matrices of shape ({n}, {d})")));
            }
        }
        if c.sup_norm().is_finite() {
            Ok(())
        } else {
            Err(MfcError::NumericalInput(format!("dynamics coefficients not finite at t = {t}")))
        }
    }

    /// True if `sigma1` or `sigma2` is nonzero somewhere on a 1000-point scan.
    pub fn has_state_dependent_noise(&self) -> bool {
        (0..1000).any(|j| {
            let c = self.at(self.horizon * j as f64 / 999.0);
            c.state_noise || c.mean_noise
        })
    }
}

/// Coefficients frozen at one time.
#[derive(Clone, Debug)]
pub struct DynamicsAt {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub b0: DVector<f64>,
    pub b1: Mat,
    pub b2: Mat,
    pub beta_x: Mat,
    pub beta_a: Mat,
    pub sigma0: Mat,
    pub sigma1: Vec<Mat>,
    pub sigma2: Vec<Mat>,
    pub state_noise: bool,
    pub mean_noise: bool,
}

/// `out += m v`
#[inline]
pub fn mat_vec_add(m: &Mat, v: &[f64], out: &mut [f64]) {
    for c in 0..m.ncols() {
        let vc = v[c];
        if vc != 0.0 {
            for r in 0..m.nrows() {
                out[r] += m[(r, c)] * vc;
            }
        }
    }
}

/// `out += m^T v`
#[inline]
pub fn mat_tr_vec_add(m: &Mat, v: &[f64], out: &mut [f64]) {
    for c in 0..m.ncols() {
        let mut s = 0.0;
        for r in 0..m.nrows() {
            s += m[(r, c)] * v[r];
        }
        out[c] += s;
    }
}

/// `sum_{r,c} m[r,c] * z[r*d + c]` for a row-major `z`.
#[inline]
pub fn frobenius_row_major(m: &Mat, z: &[f64]) -> f64 {
    let d = m.ncols();
    let mut s = 0.0;
    for r in 0..m.nrows() {
        for c in 0..d {
            s += m[(r, c)] * z[r * d + c];
        }
    }
    s
}

impl DynamicsAt {
    pub fn sup_norm(&self) -> f64 {
        let mut s = self.b0.amax();
        for m in [&self.b1, &self.b2, &self.beta_x, &self.beta_a, &self.sigma0] {
            s = s.max(m.amax());
        }
        for m in self.sigma1.iter().chain(&self.sigma2) {
            s = s.max(m.amax());
        }
        if s.is_nan() { f64::INFINITY } else { s }
    }

    /// Writes `b(x, a, xbar, abar)` into `out`.
    pub fn drift(&self, x: &[f64], a: &[f64], xbar: &[f64], abar: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.b0.as_slice());
        mat_vec_add(&self.b1, x, out);
        mat_vec_add(&self.b2, a, out);
        mat_vec_add(&self.beta_x, xbar, out);
        mat_vec_add(&self.beta_a, abar, out);
    }

    /// Writes the diffusion matrix `sigma(x, xbar)` row-major into `out` (`n × d`).
    pub fn diffusion(&self, x: &[f64], xbar: &[f64], out: &mut [f64]) {
        let d = self.d;
        for r in 0..self.n {
            for c in 0..d {
                let mut v = self.sigma0[(r, c)];
                if self.state_noise {
                    for j in 0..self.n {
                        v += x[j] * self.sigma1[j][(r, c)];
                    }
                }
                if self.mean_noise {
                    for j in 0..self.n {
                        v += xbar[j] * self.sigma2[j][(r, c)];
                    }
                }
                out[r * d + c] = v;
            }
        }
    }

    /// `out += sigma(x, xbar) dw`
    pub fn add_diffusion_times(&self, x: &[f64], xbar: &[f64], dw: &[f64], out: &mut [f64]) {
        mat_vec_add(&self.sigma0, dw, out);
        if self.state_noise {
            for j in 0..self.n {
                if x[j] != 0.0 {
                    for r in 0..self.n {
                        let mut s = 0.0;
                        for c in 0..self.d {
                            s += self.sigma1[j][(r, c)] * dw[c];
                        }
                        out[r] += x[j] * s;
                    }
                }
            }
        }
        if self.mean_noise {
            for j in 0..self.n {
                for r in 0..self.n {
                    let mut s = 0.0;
                    for c in 0..self.d {
                        s += self.sigma2[j][(r, c)] * dw[c];
                    }
                    out[r] += xbar[j] * s;
                }
            }
        }
    }

    /// `out[j] += <sigma1[j] dw, p>`: the state gradient of `<sigma(x) dw, p>`.
    pub fn add_sigma1_adjoint_dw(&self, dw: &[f64], p: &[f64], out: &mut [f64]) {
        if self.state_noise {
            add_noise_adjoint(&self.sigma1, dw, p, out);
        }
    }

    /// `out[j] += <sigma2[j] dw, p>`: the mean gradient of `<sigma(x, xbar) dw, p>`.
    pub fn add_sigma2_adjoint_dw(&self, dw: &[f64], p: &[f64], out: &mut [f64]) {
        if self.mean_noise {
            add_noise_adjoint(&self.sigma2, dw, p, out);
        }
    }

    /// `out[j] += <sigma1[j], z>_F`.
    pub fn add_sigma1_adjoint_z(&self, z: &[f64], out: &mut [f64]) {
        if self.state_noise {
            for (j, o) in out.iter_mut().enumerate() {
                *o += frobenius_row_major(&self.sigma1[j], z);
            }
        }
    }

    /// `out[j] += <sigma2[j], z>_F`.
    pub fn add_sigma2_adjoint_z(&self, z: &[f64], out: &mut [f64]) {
        if self.mean_noise {
            for (j, o) in out.iter_mut().enumerate() {
                *o += frobenius_row_major(&self.sigma2[j], z);
            }
        }
    }
}

fn add_noise_adjoint(maps: &[Mat], dw: &[f64], p: &[f64], out: &mut [f64]) {
    for (j, m) in maps.iter().enumerate() {
        let mut s = 0.0;
        for r in 0..m.nrows() {
            let mut row = 0.0;
            for c in 0..m.ncols() {
                row += m[(r, c)] * dw[c];
            }
            s += row * p[r];
        }
        out[j] += s;
    }
}
