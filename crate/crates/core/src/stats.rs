//! Estimators and goodness-of-fit tests used by the experiments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_stream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.3 {
        // The alternating series converges slowly here; the value is 1 to
        // double precision anyway.
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value with the small-sample correction for effective size `ne`.
fn ks_p_value(d: f64, ne: f64) -> f64 {
    let sq = ne.sqrt();
    kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let v = sorted(xs);
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
    }
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> KsResult {
    let a = sorted(xs);
    let b = sorted(ys);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n * m / (n + m)),
    }
}

/// CDF of Gamma(½, 1): `erf(√x)`.
pub fn gamma_half_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        statrs::function::erf::erf(x.sqrt())
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let v = sorted(xs);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median of the means of `groups` contiguous, nearly equal groups.
pub fn median_of_means(xs: &[f64], groups: usize) -> f64 {
    let g = groups.clamp(1, xs.len().max(1));
    let n = xs.len();
    let means: Vec<f64> = (0..g)
        .map(|k| {
            let (lo, hi) = (k * n / g, (k + 1) * n / g);
            mean(&xs[lo..hi])
        })
        .collect();
    median(&means)
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let slope_se = if n > 2.0 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    LinearFit {
        slope,
        intercept,
        slope_se,
    }
}

/// Options for [`moment_estimate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustOptions {
    pub groups: usize,
    pub resamples: usize,
    /// Two-sided confidence level of the percentile bootstrap.
    pub level: f64,
    pub bootstrap_seed: u64,
}

impl Default for RobustOptions {
    fn default() -> Self {
        RobustOptions {
            groups: 8,
            resamples: 1000,
            level: 0.95,
            bootstrap_seed: 0x5EED_B007,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustEstimate {
    /// Median-of-means.
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Median-of-means with a percentile-bootstrap interval, plus the plain mean.
pub fn moment_estimate(values: &[f64], opts: &RobustOptions) -> Result<RobustEstimate> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let estimate = median_of_means(values, opts.groups);
    let (m, se) = mean_se(values);
    let mut rng = rng_stream(opts.bootstrap_seed, values.len() as u64);
    let mut boot = Vec::with_capacity(opts.resamples);
    let mut buf = vec![0.0; values.len()];
    for _ in 0..opts.resamples {
        for b in buf.iter_mut() {
            *b = values[rng.random_range(0..values.len())];
        }
        boot.push(median_of_means(&buf, opts.groups));
    }
    boot.sort_by(|a, b| a.total_cmp(b));
    let alpha = 0.5 * (1.0 - opts.level);
    let (ci_lo, ci_hi) = if boot.is_empty() {
        (estimate, estimate)
    } else {
        (
            quantile_sorted(&boot, alpha),
            quantile_sorted(&boot, 1.0 - alpha),
        )
    };
    Ok(RobustEstimate {
        estimate,
        ci_lo,
        ci_hi,
        mean: m,
        stderr: se,
        count: values.len(),
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}
