use crate::error::{MfcError, Result};
use crate::reduce::{row_mean, tree_sum};

/// Uniform-weight particle cloud in `R^dim` with cached first two moments.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    samples: Vec<f64>,
    mean: Vec<f64>,
    second_moment: f64,
}

impl EmpiricalMeasure {
    /// `samples` is row-major, one row of length `dim` per particle.
    pub fn new(dim: usize, samples: Vec<f64>) -> Result<Self> {
        if dim == 0 || samples.is_empty() || samples.len() % dim != 0 {
            return Err(MfcError::config(format!(
                "empirical measure needs a nonempty sample array divisible by dim {dim}"
            )));
        }
        let mean = row_mean(&samples, dim);
        let m = samples.len() / dim;
        let second_moment = tree_sum(m, |i| {
            samples[i * dim..(i + 1) * dim].iter().map(|v| v * v).sum::<f64>()
        }) / m as f64;
        if !second_moment.is_finite() || mean.iter().any(|v| !v.is_finite()) {
            return Err(MfcError::NumericalInput(
                "empirical measure has non-finite moments".into(),
            ));
        }
        Ok(Self { dim, samples, mean, second_moment })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, |p| p.len());
        if points.iter().any(|p| p.len() != dim) {
            return Err(MfcError::config("points of differing dimension"));
        }
        Self::new(dim, points.concat())
    }

    /// Point mass at `x`, replicated `m` times. Moments are set exactly.
    pub fn dirac(x: &[f64], m: usize) -> Result<Self> {
        if x.is_empty() || m == 0 || x.iter().any(|v| !v.is_finite()) {
            return Err(MfcError::config("point mass needs a finite nonempty point and m >= 1"));
        }
        Ok(Self {
            dim: x.len(),
            samples: x.repeat(m),
            mean: x.to_vec(),
            second_moment: x.iter().map(|v| v * v).sum(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
    /// Mean of `|x|^2` over the cloud.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }
    pub fn l2_norm(&self) -> f64 {
        self.second_moment.sqrt()
    }
    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Two clouds of equal size coupled by particle index, e.g. (state, control)
/// pairs or (state, adjoint) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct JointMeasure {
    pub first: EmpiricalMeasure,
    pub second: EmpiricalMeasure,
}

impl JointMeasure {
    pub fn new(first: EmpiricalMeasure, second: EmpiricalMeasure) -> Result<Self> {
        if first.len() != second.len() {
            return Err(MfcError::config(format!(
                "joint cloud marginals have {} and {} samples",
                first.len(),
                second.len()
            )));
        }
        Ok(Self { first, second })
    }

    pub fn from_parts(dim1: usize, first: Vec<f64>, dim2: usize, second: Vec<f64>) -> Result<Self> {
        Self::new(EmpiricalMeasure::new(dim1, first)?, EmpiricalMeasure::new(dim2, second)?)
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }
    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }
    /// Mean of `|u|^2 + |v|^2`.
    pub fn second_moment(&self) -> f64 {
        self.first.second_moment() + self.second.second_moment()
    }
}
