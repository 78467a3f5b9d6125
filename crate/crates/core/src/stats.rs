//! Sample summaries and the two-sample Kolmogorov-Smirnov test.

use serde::Serialize;

use crate::error::{domain, Result};

/// Asymptotic two-sample KS coefficient at the 1% level.
pub const KS_C_001: f64 = 1.628;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical: f64,
    pub passed: bool,
}

/// sup |F_a − F_b| and the 1% critical value c·√((n+m)/(nm)).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(domain("KS test needs two nonempty samples"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(domain("KS test got a NaN"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let (nf, mf) = (n as f64, m as f64);
    let critical = KS_C_001 * ((nf + mf) / (nf * mf)).sqrt();
    Ok(KsResult {
        statistic: d,
        critical,
        passed: d < critical,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub std_error: f64,
    /// Empirical quantiles at 0, 0.1, …, 1.
    pub deciles: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks: Option<KsResult>,
    #[serde(skip)]
    sorted: Vec<f64>,
}

impl SampleSummary {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(domain("cannot summarise an empty sample"));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let m2: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self::from_parts(n, mean, m2, sorted))
    }

    fn from_parts(n: usize, mean: f64, m2: f64, sorted: Vec<f64>) -> Self {
        let variance = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        SampleSummary {
            n,
            mean,
            variance,
            std_error: (variance / n as f64).sqrt(),
            deciles: (0..=10).map(|k| quantile(&sorted, k as f64 / 10.0)).collect(),
            ks: None,
            sorted,
        }
    }

    /// Attach a KS comparison against `other`.
    pub fn paired(mut self, other: &SampleSummary) -> Result<Self> {
        self.ks = Some(ks_two_sample(&self.sorted, &other.sorted)?);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Summary of the union of two disjoint samples.
    pub fn merge(&self, other: &SampleSummary) -> SampleSummary {
        let (n1, n2) = (self.n as f64, other.n as f64);
        let n = n1 + n2;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * n2 / n;
        let m2 = self.variance * (n1 - 1.0).max(0.0) + other.variance * (n2 - 1.0).max(0.0) + delta * delta * n1 * n2 / n;
        let mut sorted = Vec::with_capacity(self.n + other.n);
        sorted.extend_from_slice(&self.sorted);
        sorted.extend_from_slice(&other.sorted);
        sorted.sort_by(f64::total_cmp);
        Self::from_parts(self.n + other.n, mean, m2, sorted)
    }

    /// |mean − target| in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if self.std_error > 0.0 {
            d / self.std_error
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Linearly interpolated quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
