//! Monte Carlo estimators with batch-means confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::functionals::BetaPaths;

/// Number of batches used for confidence intervals.
pub const DEFAULT_BATCHES: usize = 32;

/// Two-sided 97.5% Student-t quantile.
pub fn t_quantile_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df.max(1) as f64)
        .expect("valid t distribution")
        .inverse_cdf(0.975)
}

/// A point estimate with a 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_half_width: f64,
}

impl Estimate {
    pub fn contains(&self, target: f64) -> bool {
        (self.value - target).abs() <= self.ci_half_width
    }
}

/// Streaming accumulator: power sums up to order 8 and per-batch sums.
///
/// Sample `i` goes to batch `i mod B`, so the batch assignment depends only on the
/// sample index and partitions can be merged in any order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCStats {
    count: u64,
    power_sums: [f64; 8],
    batch_count: Vec<u64>,
    batch_sum: Vec<f64>,
}

impl Default for MCStats {
    fn default() -> Self {
        Self::new(DEFAULT_BATCHES)
    }
}

impl MCStats {
    pub fn new(batches: usize) -> Self {
        assert!(batches >= 2, "need at least two batches");
        Self {
            count: 0,
            power_sums: [0.0; 8],
            batch_count: vec![0; batches],
            batch_sum: vec![0.0; batches],
        }
    }

    /// Accumulates every sample of a slice, indexed by position.
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut s = Self::default();
        for (i, x) in samples.iter().enumerate() {
            s.push(i as u64, *x);
        }
        s
    }

    pub fn push(&mut self, index: u64, x: f64) {
        self.count += 1;
        let mut p = 1.0;
        for s in self.power_sums.iter_mut() {
            p *= x;
            *s += p;
        }
        let b = (index % self.batch_count.len() as u64) as usize;
        self.batch_count[b] += 1;
        self.batch_sum[b] += x;
    }

    /// Combines two accumulators over disjoint sample sets.
    pub fn merge(&mut self, other: &Self) {
        assert_eq!(
            self.batch_count.len(),
            other.batch_count.len(),
            "batch counts differ"
        );
        self.count += other.count;
        for (a, b) in self.power_sums.iter_mut().zip(&other.power_sums) {
            *a += b;
        }
        for (a, b) in self.batch_count.iter_mut().zip(&other.batch_count) {
            *a += b;
        }
        for (a, b) in self.batch_sum.iter_mut().zip(&other.batch_sum) {
            *a += b;
        }
    }

    pub fn batches(&self) -> usize {
        self.batch_count.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// `E[X^k]` for `k` in `1..=8`.
    pub fn raw_moment(&self, k: usize) -> f64 {
        assert!((1..=8).contains(&k));
        self.power_sums[k - 1] / self.count as f64
    }

    pub fn mean(&self) -> f64 {
        self.raw_moment(1)
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let n = self.count as f64;
        let m = self.mean();
        (self.power_sums[1] - n * m * m) / (n - 1.0)
    }

    /// Batch-means 95% half-width for the mean.
    pub fn mean_ci(&self) -> f64 {
        let means: Vec<f64> = self
            .batch_sum
            .iter()
            .zip(&self.batch_count)
            .filter(|(_, c)| **c > 0)
            .map(|(s, c)| s / *c as f64)
            .collect();
        let b = means.len();
        if b < 2 {
            return f64::INFINITY;
        }
        let mu = means.iter().sum::<f64>() / b as f64;
        let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (b - 1) as f64;
        t_quantile_975(b - 1) * (var / b as f64).sqrt()
    }

    pub fn mean_estimate(&self) -> Estimate {
        Estimate {
            value: self.mean(),
            ci_half_width: self.mean_ci(),
        }
    }
}

fn nonempty(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        Err(Error::EmptySample)
    } else {
        Ok(())
    }
}

/// `(E|X|^p)^{1/p}` with a batch-means interval transported by the delta method.
pub fn lp_moment(samples: &[f64], p: f64) -> Result<Estimate> {
    nonempty(samples)?;
    if !(1.0..=8.0).contains(&p) {
        return Err(Error::param("p", "must lie in [1, 8]"));
    }
    let abs_p: Vec<f64> = samples.iter().map(|x| x.abs().powf(p)).collect();
    let s = MCStats::from_samples(&abs_p);
    let m = s.mean();
    let value = m.powf(1.0 / p);
    let ci = if m > 0.0 && samples.len() >= 2 {
        value / (p * m) * s.mean_ci()
    } else {
        0.0
    };
    Ok(Estimate {
        value,
        ci_half_width: if ci.is_finite() { ci } else { 0.0 },
    })
}

/// Mean with a batch-means interval.
pub fn mean_estimate(samples: &[f64]) -> Result<Estimate> {
    nonempty(samples)?;
    Ok(MCStats::from_samples(samples).mean_estimate())
}

/// Sample variance with a batch-means interval (batches of centred squares).
pub fn variance_estimate(samples: &[f64]) -> Result<Estimate> {
    nonempty(samples)?;
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let sq: Vec<f64> = samples.iter().map(|x| (x - mu).powi(2)).collect();
    let s = MCStats::from_samples(&sq);
    let corr = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    Ok(Estimate {
        value: s.mean() * corr,
        ci_half_width: s.mean_ci() * corr,
    })
}

/// Sample covariance of paired samples with a batch-means interval.
pub fn sample_cov(a: &[f64], b: &[f64]) -> Result<Estimate> {
    nonempty(a)?;
    if a.len() != b.len() {
        return Err(Error::param("b", "paired samples must have equal length"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let s = MCStats::from_samples(&prod);
    let corr = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    Ok(Estimate {
        value: s.mean() * corr,
        ci_half_width: s.mean_ci() * corr,
    })
}

/// Pearson correlation.
pub fn sample_corr(a: &[f64], b: &[f64]) -> Result<f64> {
    let c = sample_cov(a, b)?.value;
    let va = variance_estimate(a)?.value;
    let vb = variance_estimate(b)?.value;
    Ok(c / (va * vb).sqrt())
}

/// Covariance of `beta^n_t - beta^n_s` and `beta^m_t - beta^m_s` over an ensemble.
pub fn empirical_cov(paths: &[BetaPaths], n: usize, m: usize, s: f64, t: f64) -> Result<Estimate> {
    if paths.len() < 100 {
        return Err(Error::TooFewPaths {
            got: paths.len(),
            need: 100,
        });
    }
    let a: Vec<f64> = paths
        .iter()
        .map(|p| p.increment(n, s, t))
        .collect::<Result<_>>()?;
    let b: Vec<f64> = paths
        .iter()
        .map(|p| p.increment(m, s, t))
        .collect::<Result<_>>()?;
    sample_cov(&a, &b)
}

/// Holder estimate of a random field ensemble on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub alpha: f64,
    pub p: f64,
    /// `max_{probed (x,y)} ||u(x) - u(y)||_{L_p} / |x - y|^alpha`
    pub value: f64,
    pub ci_half_width: f64,
    /// `max_x ||u(x)||_{L_p}` over the grid
    pub sup_part: f64,
    pub n_grid: usize,
}

impl HolderEstimate {
    /// `sup_part + value`, the full `C^alpha_p` norm.
    pub fn norm(&self) -> f64 {
        self.sup_part + self.value
    }
}

/// Deterministic dyadic pair schedule: separations of `2^j` cells, base points evenly spread.
pub fn holder_pairs(n_grid: usize, pair_budget: usize) -> Vec<(usize, usize)> {
    let mut seps = Vec::new();
    let mut d = 1;
    while d <= n_grid / 2 {
        seps.push(d);
        d *= 2;
    }
    if seps.is_empty() {
        return Vec::new();
    }
    let per = (pair_budget / seps.len()).clamp(1, n_grid);
    let mut pairs = Vec::with_capacity(per * seps.len());
    for &d in &seps {
        for i in 0..per {
            let x = i * n_grid / per;
            pairs.push((x, (x + d) % n_grid));
        }
    }
    pairs
}

/// `C^alpha_p` seminorm of an ensemble of grid fields (one `Vec` of grid values per sample).
pub fn holder_seminorm(
    ensemble: &[Vec<f64>],
    alpha: f64,
    p: f64,
    pair_budget: usize,
) -> Result<HolderEstimate> {
    let first = ensemble.first().ok_or(Error::EmptySample)?;
    let n = first.len();
    if n < 2 {
        return Err(Error::BadGridSize(n));
    }
    if ensemble.iter().any(|f| f.len() != n) {
        return Err(Error::param("ensemble", "all fields must share one grid"));
    }
    let mut best = Estimate {
        value: 0.0,
        ci_half_width: 0.0,
    };
    let mut diffs = vec![0.0; ensemble.len()];
    for (x, y) in holder_pairs(n, pair_budget) {
        let sep = x.abs_diff(y).min(n - x.abs_diff(y)) as f64 / n as f64;
        for (d, f) in diffs.iter_mut().zip(ensemble) {
            *d = f[x] - f[y];
        }
        let e = lp_moment(&diffs, p)?;
        let scale = sep.powf(alpha);
        let q = e.value / scale;
        if q > best.value {
            best = Estimate {
                value: q,
                ci_half_width: e.ci_half_width / scale,
            };
        }
    }
    let mut sup_part: f64 = 0.0;
    let mut col = vec![0.0; ensemble.len()];
    for j in 0..n {
        for (c, f) in col.iter_mut().zip(ensemble) {
            *c = f[j];
        }
        sup_part = sup_part.max(lp_moment(&col, p)?.value);
    }
    Ok(HolderEstimate {
        alpha,
        p,
        value: best.value,
        ci_half_width: best.ci_half_width,
        sup_part,
        n_grid: n,
    })
}

/// `sup_x ||u(x)||_{L_p}` of an ensemble of grid fields.
pub fn sup_lp_norm(ensemble: &[Vec<f64>], p: f64) -> Result<f64> {
    let n = ensemble.first().ok_or(Error::EmptySample)?.len();
    let mut col = vec![0.0; ensemble.len()];
    let mut best: f64 = 0.0;
    for j in 0..n {
        for (c, f) in col.iter_mut().zip(ensemble) {
            *c = f[j];
        }
        best = best.max(lp_moment(&col, p)?.value);
    }
    Ok(best)
}

/// Two-sample Kolmogorov-Smirnov result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // theta-function form converges fast for small lambda
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|j| (-((2 * j - 1) as f64).powi(2) * c).exp())
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|j| {
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Two-sample KS statistic with the asymptotic p-value (Stephens' small-sample correction).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    nonempty(a)?;
    nonempty(b)?;
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    let p_value = kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d);
    Ok(KsResult {
        statistic: d,
        p_value,
    })
}

/// Least-squares slope in log-log coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_half_width: f64,
}

pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::param("ys", "must match xs in length"));
    }
    if xs.len() < 3 {
        return Err(Error::TooFewPaths {
            got: xs.len(),
            need: 3,
        });
    }
    if let Some(i) = xs
        .iter()
        .zip(ys)
        .position(|(x, y)| !(*x > 0.0) || !(*y > 0.0))
    {
        return Err(Error::NonPositiveData(i));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    Ok(SlopeFit {
        slope,
        intercept,
        ci_half_width: t_quantile_975(lx.len() - 2) * se,
    })
}
