use crate::error::{MfcError, Result};

/// Weighted least-squares slope of `ln error` against `ln mesh`, with its
/// residual-based standard error. Points are `(mesh, error, weight)`.
pub fn fit_loglog_slope(points: &[(f64, f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(MfcError::InsufficientData(format!("log-log fit needs at least 3 points, got {}", points.len())));
    }
    if let Some(&(h, e, w)) = points.iter().find(|(h, e, w)| !(*h > 0.0 && *e > 0.0 && *w > 0.0 && w.is_finite())) {
        return Err(MfcError::config(format!(
            "log-log fit needs positive mesh, error and weight (got {h}, {e}, {w})"
        )));
    }
    let sw: f64 = points.iter().map(|p| p.2).sum();
    let xm = points.iter().map(|p| p.2 * p.0.ln()).sum::<f64>() / sw;
    let ym = points.iter().map(|p| p.2 * p.1.ln()).sum::<f64>() / sw;
    let sxx: f64 = points.iter().map(|p| p.2 * (p.0.ln() - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(MfcError::InsufficientData("log-log fit needs at least two distinct meshes".into()));
    }
    let sxy: f64 = points.iter().map(|p| p.2 * (p.0.ln() - xm) * (p.1.ln() - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = points
        .iter()
        .map(|p| p.2 * (p.1.ln() - intercept - slope * p.0.ln()).powi(2))
        .sum();
    // relative weights: the residual scale is estimated from the fit itself
    let se = (rss / (points.len() - 2) as f64 / sxx).sqrt();
    Ok((slope, se))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(order: f64, noise: impl Fn(usize) -> f64) -> Vec<(f64, f64, f64)> {
        (0..6)
            .map(|j| {
                let h = 0.25 / 2f64.powi(j);
                (h, 3.0 * h.powf(order) * (1.0 + noise(j as usize)), 1.0)
            })
            .collect()
    }

    #[test]
    fn exact_powers() {
        for order in [1.0, 0.5] {
            let (s, se) = fit_loglog_slope(&pts(order, |_| 0.0)).unwrap();
            assert!((s - order).abs() < 1e-12);
            assert!(se < 1e-12);
        }
    }

    #[test]
    fn noisy_half_order() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (s, se) = fit_loglog_slope(&pts(0.5, |j| 0.05 * noise[j])).unwrap();
        assert!((0.45..=0.55).contains(&s), "{s}");
        assert!(se > 0.0 && se < 0.05);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(fit_loglog_slope(&[(0.1, 1.0, 1.0), (0.2, 2.0, 1.0)]), Err(MfcError::InsufficientData(_))));
        assert!(fit_loglog_slope(&[(0.1, 0.0, 1.0), (0.2, 2.0, 1.0), (0.3, 1.0, 1.0)]).is_err());
        assert!(fit_loglog_slope(&[(0.1, 1.0, 1.0), (0.1, 2.0, 1.0), (0.1, 1.0, 1.0)]).is_err());
    }

    #[test]
    fn weights_pull_towards_trusted_points() {
        let mut p = pts(1.0, |_| 0.0);
        p[5].1 *= 4.0;
        p[5].2 = 1e-6;
        let (s, _) = fit_loglog_slope(&p).unwrap();
        assert!((s - 1.0).abs() < 1e-3);
    }
}
