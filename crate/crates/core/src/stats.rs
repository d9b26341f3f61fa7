//! Slope fitting on log-log data.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed;

/// Least-squares line `y = a + b x`; returns `(b, a)`.
pub fn ols<T: Real>(x: &[T], y: &[T]) -> Result<(T, T)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("need at least two paired points".into()));
    }
    let n = T::from_usize_lossy(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let sxx = x.iter().fold(T::zero(), |a, &v| a + (v - mx) * (v - mx));
    if !(sxx > T::zero()) {
        return Err(Error::Degenerate("abscissae are all equal".into()));
    }
    let sxy = x.iter().zip(y).fold(T::zero(), |a, (&u, &v)| a + (u - mx) * (v - my));
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Slope of `log y` against `log x`.
pub fn log_log_slope<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    if x.iter().chain(y).any(|&v| !(v > T::zero())) {
        return Err(Error::Domain("log-log fit needs positive data".into()));
    }
    let lx: Vec<T> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<T> = y.iter().map(|v| v.ln()).collect();
    Ok(ols(&lx, &ly)?.0)
}

/// Percentile bootstrap interval for the log-log slope of per-group means.
/// Each group's samples are resampled with replacement.
pub fn bootstrap_slope_ci<T: Real>(
    x: &[T],
    groups: &[Vec<T>],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(T, T)> {
    if x.len() != groups.len() || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidArgument("every abscissa needs a nonempty group".into()));
    }
    let mut rng = seed::rng(seed);
    let mut slopes = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let means: Vec<T> = groups
            .iter()
            .map(|g| {
                let s = (0..g.len()).fold(T::zero(), |a, _| a + g[rng.random_range(0..g.len())]);
                s / T::from_usize_lossy(g.len())
            })
            .collect();
        slopes.push(log_log_slope(x, &means)?);
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).expect("finite slopes"));
    let tail = (1.0 - level) / 2.0;
    let at = |p: f64| slopes[((p * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Ok((at(tail), at(1.0 - tail)))
}

pub fn mean<T: Real>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let x = [1.0f64, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y).unwrap() + 0.5).abs() < 1e-14);
    }

    #[test]
    fn bootstrap_brackets_the_slope() {
        let x = [4.0f64, 16.0, 64.0];
        let groups: Vec<Vec<f64>> = x
            .iter()
            .map(|&m| {
                (0..30)
                    .map(|i| m.powf(-0.5) * (1.0 + 0.1 * ((i % 7) as f64 - 3.0) / 3.0))
                    .collect()
            })
            .collect();
        let (lo, hi) = bootstrap_slope_ci(&x, &groups, 200, 0.95, 1).unwrap();
        assert!(lo <= -0.5 + 1e-9 && -0.5 - 1e-9 <= hi, "{lo} {hi}");
        assert_eq!((lo, hi), bootstrap_slope_ci(&x, &groups, 200, 0.95, 1).unwrap());
    }

    #[test]
    fn degenerate_inputs() {
        assert!(ols(&[1.0f64, 1.0], &[1.0, 2.0]).is_err());
        assert!(log_log_slope(&[1.0f64, 2.0], &[0.0, 1.0]).is_err());
    }
}
