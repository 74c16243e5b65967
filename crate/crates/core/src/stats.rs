//! Sample summaries and Kolmogorov–Smirnov tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normal quantile for a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Monte Carlo estimate of a mean over possibly censored samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
    /// All samples, censored ones included.
    pub n_samples: usize,
    pub n_censored: usize,
    /// Diagnostics only, never used for pass/fail decisions.
    pub median: f64,
    pub iqr: f64,
}

impl MCEstimate {
    /// Summarises `samples`, where `None` marks a censored observation.
    pub fn from_samples(samples: &[Option<f64>]) -> Result<Self> {
        let observed: Vec<f64> = samples.iter().flatten().copied().collect();
        if observed.is_empty() {
            return Err(Error::EstimationFailure(format!(
                "all {} samples censored",
                samples.len()
            )));
        }
        let (mean, stderr) = mean_stderr(&observed);
        let mut sorted = observed;
        sorted.sort_by(f64::total_cmp);
        Ok(MCEstimate {
            mean,
            stderr,
            ci95_lo: mean - Z95 * stderr,
            ci95_hi: mean + Z95 * stderr,
            n_samples: samples.len(),
            n_censored: samples.len() - sorted.len(),
            median: quantile_sorted(&sorted, 0.5),
            iqr: quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
        })
    }

    pub fn n_observed(&self) -> usize {
        self.n_samples - self.n_censored
    }
}

/// Sample mean and standard error (`s / √n`, with `s` the unbiased deviation).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt())
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Effective sample size entering the asymptotic distribution.
    pub n_eff: f64,
}

impl KsResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form converges fast for small λ
        let y = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let cdf: f64 = (1..=8)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (y * m * m).exp()
            })
            .sum::<f64>()
            * (2.0 * std::f64::consts::PI).sqrt()
            / lambda;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

/// One-sample test of `samples` against the continuous distribution `cdf`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::InsufficientSample("KS test needs at least one sample".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
        n_eff: n,
    })
}

/// Two-sample test that `a` and `b` come from the same distribution.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSample("KS test needs two non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let n_eff = na * nb / (na + nb);
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n_eff),
        n_eff,
    })
}
