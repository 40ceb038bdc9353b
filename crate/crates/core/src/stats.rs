//! Small statistics toolkit used by the estimators and checks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson goodness-of-fit result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: u64,
    pub p_value: f64,
}

/// Pearson chi-square of `counts` against cell probabilities `probs`.
/// Cells with zero probability are dropped when empty; a count in such a
/// cell gives `p = 0`.
pub fn chi_square(counts: &[u64], probs: &[f64]) -> ChiSquare {
    assert_eq!(counts.len(), probs.len());
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0u64;
    for (&c, &p) in counts.iter().zip(probs) {
        if p == 0.0 {
            if c > 0 {
                return ChiSquare { statistic: f64::INFINITY, df: 0, p_value: 0.0 };
            }
            continue;
        }
        let e = p * total as f64;
        stat += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    let df = cells.saturating_sub(1);
    let p_value = if df == 0 {
        1.0
    } else {
        ChiSquared::new(df as f64).map(|d| d.sf(stat)).unwrap_or(f64::NAN)
    };
    ChiSquare { statistic: stat, df, p_value }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn std_err(xs: &[f64]) -> f64 {
    std_dev(xs) / (xs.len() as f64).sqrt()
}

/// Upper empirical quantile: the `(1 - q)` level order statistic
/// `x_(M - 1 - floor(q M))` of the ascending sample.
pub fn upper_quantile(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let k = ((q * m as f64).floor() as usize).min(m - 1);
    sorted[m - 1 - k]
}

/// Half-width of the distribution-free confidence band for
/// [`upper_quantile`]: half the distance between the order statistics one
/// binomial standard deviation on either side.
pub fn upper_quantile_sigma(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len() as f64;
    let centre = m - 1.0 - (q * m).floor();
    let spread = (m * q * (1.0 - q)).sqrt().max(1.0);
    let lo = (centre - spread).floor().max(0.0) as usize;
    let hi = ((centre + spread).ceil() as usize).min(sorted.len() - 1);
    (sorted[hi] - sorted[lo]) / 2.0
}

/// Hill estimate of the tail exponent from the top `frac` of the sample.
///
/// Returns `+inf` when the reference order statistic is zero or the top of
/// the sample is flat, i.e. when no power-law tail is visible.
pub fn hill_estimator(samples: &[f64], frac: f64) -> f64 {
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| b.total_cmp(a));
    let k = ((frac * xs.len() as f64).ceil() as usize).max(1);
    if k >= xs.len() {
        return f64::NAN;
    }
    let reference = xs[k];
    if reference <= 0.0 {
        return f64::INFINITY;
    }
    let s: f64 = xs[..k].iter().map(|x| (x / reference).ln()).sum();
    if s <= 0.0 {
        f64::INFINITY
    } else {
        k as f64 / s
    }
}

/// Sample third raw moment.
pub fn third_moment(xs: &[f64]) -> f64 {
    mean(&xs.iter().map(|x| x * x * x).collect::<Vec<_>>())
}
