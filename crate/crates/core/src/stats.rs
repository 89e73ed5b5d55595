//! Small statistical toolkit: deterministic sums, moments, bootstrap
//! intervals and goodness-of-fit tests.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::rng::StreamRng;

const PAR_SUM_MIN: usize = 1 << 14;

/// Pairwise sum of `f(x)` over `xs`, split at `len / 2` recursively.
///
/// The split structure depends only on the length, so the result is
/// bit-identical for any thread count. On a generation buffer the halves
/// are exactly the two subtrees of each vertex.
pub fn pairwise_sum_by<T, F>(xs: &[T], f: &F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync,
{
    match xs.len() {
        0 => 0.0,
        1 => f(&xs[0]),
        2 => f(&xs[0]) + f(&xs[1]),
        len => {
            let (a, b) = xs.split_at(len / 2);
            if len >= PAR_SUM_MIN {
                let (x, y) = rayon::join(|| pairwise_sum_by(a, f), || pairwise_sum_by(b, f));
                x + y
            } else {
                pairwise_sum_by(a, f) + pairwise_sum_by(b, f)
            }
        }
    }
}

pub fn pairwise_sum(xs: &[f64]) -> f64 {
    pairwise_sum_by(xs, &|x: &f64| *x)
}

/// Mean computed as `x_0 + mean(x_i - x_0)`; exact on constant input.
pub fn mean(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "mean of empty sample");
    let x0 = xs[0];
    x0 + pairwise_sum_by(xs, &|x: &f64| x - x0) / xs.len() as f64
}

/// Unbiased sample variance (0 for a single observation).
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    pairwise_sum_by(xs, &|x: &f64| (x - m) * (x - m)) / (xs.len() - 1) as f64
}

pub fn std_error(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Plug-in covariance `mean((a - ā)(b - b̄))`.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ma, mb) = (mean(a), mean(b));
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    pairwise_sum(&prods) / a.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of empty sample");
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Percentile bootstrap interval for a statistic of paired samples.
///
/// `stat` receives resampled copies of `a` and `b` (same indices).
pub fn bootstrap_paired<F>(
    a: &[f64],
    b: &[f64],
    stat: F,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Interval
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut rng = StreamRng::new(seed);
    let mut ra = vec![0.0; n];
    let mut rb = vec![0.0; n];
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for i in 0..n {
            let j = rng.random_range(0..n);
            ra[i] = a[j];
            rb[i] = b[j];
        }
        stats.push(stat(&ra, &rb));
    }
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Interval {
        lo: quantile_sorted(&stats, alpha),
        hi: quantile_sorted(&stats, 1.0 - alpha),
    }
}

pub fn bootstrap<F>(xs: &[f64], stat: F, resamples: usize, level: f64, seed: u64) -> Interval
where
    F: Fn(&[f64]) -> f64,
{
    bootstrap_paired(xs, xs, |a, _| stat(a), resamples, level, seed)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < s.len() {
        s[i] + frac * (s[i + 1] - s[i])
    } else {
        s[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of observed counts against cell probabilities.
/// Cells with zero probability must have zero counts and are dropped.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> ChiSquareResult {
    assert_eq!(counts.len(), probs.len());
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        if p <= 0.0 {
            if c > 0 {
                stat = f64::INFINITY;
            }
            continue;
        }
        let e = p * total as f64;
        stat += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    let dof = cells.saturating_sub(1).max(1);
    let p_value = if stat.is_finite() {
        1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat)
    } else {
        0.0
    };
    ChiSquareResult {
        statistic: stat,
        dof,
        p_value,
    }
}

/// Kolmogorov limiting survival function `P(K > x)`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.3 {
        // Series below converges slowly here; the true value is 1 to ~1e-9.
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsTwoSample {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsTwoSample {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let t = x[i].min(y[j]);
        while i < n && x[i] <= t {
            i += 1;
        }
        while j < m && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    let p_value = kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d);
    KsTwoSample {
        statistic: d,
        p_value,
    }
}

/// Maps `xs` through `f` in parallel, preserving order.
pub fn par_map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}
