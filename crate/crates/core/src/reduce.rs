//! Deterministic reductions over particles.
//!
//! Every cross-particle sum goes through a fixed tree: particles are cut into
//! leaves of `LEAF` consecutive indices, each leaf is summed left to right, and
//! leaf totals are combined pairwise. The shape depends only on the particle
//! count, so results do not change with the number of worker threads.

use rayon::prelude::*;

pub const LEAF: usize = 256;

fn combine_pairwise(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += *y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// Tree sum of a `dim`-vector valued term. `add(i, acc)` adds term `i` into `acc`.
pub fn tree_sum_vec<F>(len: usize, dim: usize, add: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    if len == 0 {
        return vec![0.0; dim];
    }
    let leaves = len.div_ceil(LEAF);
    let parts: Vec<Vec<f64>> = (0..leaves)
        .into_par_iter()
        .map(|leaf| {
            let mut acc = vec![0.0; dim];
            let end = ((leaf + 1) * LEAF).min(len);
            for i in leaf * LEAF..end {
                add(i, &mut acc);
            }
            acc
        })
        .collect();
    combine_pairwise(parts)
}

/// Tree sum of a scalar term.
pub fn tree_sum<F>(len: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    tree_sum_vec(len, 1, |i, acc| acc[0] += term(i))[0]
}

/// Column means of a row-major `len × dim` array.
pub fn row_mean(data: &[f64], dim: usize) -> Vec<f64> {
    if dim == 0 {
        return Vec::new();
    }
    let len = data.len() / dim;
    let mut s = tree_sum_vec(len, dim, |i, acc| {
        for (a, v) in acc.iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
            *a += *v;
        }
    });
    let inv = 1.0 / len.max(1) as f64;
    s.iter_mut().for_each(|v| *v *= inv);
    s
}

/// Mean of a scalar term over `len` particles.
pub fn tree_mean<F>(len: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    tree_sum(len, term) / len.max(1) as f64
}

/// Sample mean and standard error (`std / sqrt(len)`) of per-particle values.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    let mean = tree_mean(m, |i| values[i]);
    if m < 2 {
        return (mean, 0.0);
    }
    let var = tree_sum(m, |i| (values[i] - mean).powi(2)) / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_sum_on_integers() {
        let n = 3 * LEAF + 17;
        let s = tree_sum(n, |i| i as f64);
        assert_eq!(s, (n * (n - 1) / 2) as f64);
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let vals: Vec<f64> = (0..10_000).map(|i| ((i as f64) * 0.37).sin() * 1e3).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| tree_sum(vals.len(), |i| vals[i]));
        let b = four.install(|| tree_sum(vals.len(), |i| vals[i]));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn row_mean_of_two_columns() {
        let data = [1.0, 10.0, 3.0, 30.0];
        assert_eq!(row_mean(&data, 2), vec![2.0, 20.0]);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_and_stderr(&[2.5; 9]), (2.5, 0.0));
    }
}
