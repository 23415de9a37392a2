//! Posterior summaries, split rank-normalised R̂, simulation-study scoring and
//! plotting coordinates.

use crate::dist::norm_quantile;
use crate::sampler::SampleTable;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("HDI mass must lie in (0, 1], got {0}")]
    Mass(f64),
    #[error("R-hat needs at least 2 chains, got {0}")]
    TooFewChains(usize),
    #[error("chains must have equal length; chain {chain} has {len}, chain 0 has {expected}")]
    UnequalChains {
        chain: usize,
        len: usize,
        expected: usize,
    },
    #[error("R-hat needs chains of length at least 4, got {0}")]
    ShortChains(usize),
    #[error("degenerate chains: zero total variance")]
    Degenerate,
    #[error("non-finite draw in {0}")]
    NonFinite(String),
    #[error("need at least 2 datasets, got {0}")]
    TooFewDatasets(usize),
    #[error("column `{column}` missing from chain {chain}")]
    MissingColumn { column: String, chain: usize },
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Number of draws an interval of probability `mass` must hold out of `n`.
fn draws_for_mass(mass: f64, n: usize) -> usize {
    let t = mass * n as f64;
    let r = t.round();
    let m = if (t - r).abs() < 1e-9 * n as f64 { r } else { t.ceil() };
    (m as usize).clamp(1, n)
}

/// Shortest interval over the sorted draws holding `⌈mass·n⌉` of them; the
/// lowest start wins ties.
pub fn hdi(samples: &[f64], mass: f64) -> Result<(f64, f64), DiagnosticsError> {
    if samples.len() < 2 {
        return Err(DiagnosticsError::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(DiagnosticsError::Mass(mass));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFinite("HDI input".into()));
    }
    let s = sorted(samples);
    let m = draws_for_mass(mass, s.len());
    let mut best = 0;
    let mut width = f64::INFINITY;
    for i in 0..=s.len() - m {
        let w = s[i + m - 1] - s[i];
        if w < width {
            width = w;
            best = i;
        }
    }
    Ok((s[best], s[best + m - 1]))
}

fn median_sorted(s: &[f64]) -> f64 {
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Average ranks (1-based) of `values`, ties sharing their mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Classical R̂ of equally long chains; `None` when all within-chain
/// variances vanish and the chains agree.
fn classic_rhat(chains: &[&[f64]]) -> Option<f64> {
    let n = chains[0].len() as f64;
    let m = chains.len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { None } else { Some(f64::INFINITY) };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

fn rank_normalise(split: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pooled: Vec<f64> = split.iter().flatten().copied().collect();
    let s = pooled.len() as f64;
    let r = ranks(&pooled);
    let z: Vec<f64> = r
        .iter()
        .map(|&r| norm_quantile((r - 0.375) / (s + 0.25)))
        .collect();
    let len = split[0].len();
    z.chunks(len).map(<[f64]>::to_vec).collect()
}

/// Split, rank-normalised R̂: the larger of the bulk value and the value for
/// draws folded about the pooled median.
pub fn r_hat(chains: &[Vec<f64>]) -> Result<f64, DiagnosticsError> {
    if chains.len() < 2 {
        return Err(DiagnosticsError::TooFewChains(chains.len()));
    }
    let n = chains[0].len();
    for (i, c) in chains.iter().enumerate() {
        if c.len() != n {
            return Err(DiagnosticsError::UnequalChains {
                chain: i,
                len: c.len(),
                expected: n,
            });
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(DiagnosticsError::NonFinite(format!("chain {i}")));
        }
    }
    if n < 4 {
        return Err(DiagnosticsError::ShortChains(n));
    }
    let first = chains[0][0];
    if chains.iter().flatten().all(|&v| v == first) {
        return Err(DiagnosticsError::Degenerate);
    }
    let half = n / 2;
    let split: Vec<Vec<f64>> = chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()])
        .collect();
    let bulk_z = rank_normalise(&split);
    let bulk = classic_rhat(&bulk_z.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let med = median_sorted(&sorted(&split.concat()));
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|v| (v - med).abs()).collect())
        .collect();
    let tail_z = rank_normalise(&folded);
    let tail = classic_rhat(&tail_z.iter().map(Vec::as_slice).collect::<Vec<_>>());
    match (bulk, tail) {
        (Some(a), Some(b)) => Ok(a.max(b)),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => Err(DiagnosticsError::Degenerate),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub parameter: String,
    pub mean: f64,
    pub median: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
    pub n_draws: usize,
}

impl PosteriorSummary {
    /// Mean, median and 95% HDI of pooled draws.
    pub fn from_draws(parameter: &str, draws: &[f64]) -> Result<Self, DiagnosticsError> {
        if draws.iter().any(|v| !v.is_finite()) {
            return Err(DiagnosticsError::NonFinite(parameter.to_string()));
        }
        let (lo, hi) = hdi(draws, 0.95)?;
        let s = sorted(draws);
        Ok(PosteriorSummary {
            parameter: parameter.to_string(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            median: median_sorted(&s),
            hdi_low: lo,
            hdi_high: hi,
            n_draws: s.len(),
        })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.hdi_low <= value && value <= self.hdi_high
    }
}

/// Summary row of one parameter across chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterReport {
    #[serde(flatten)]
    pub summary: PosteriorSummary,
    /// Absent with fewer than two chains or degenerate draws.
    pub r_hat: Option<f64>,
}

fn column_per_chain(tables: &[SampleTable], name: &str) -> Result<Vec<Vec<f64>>, DiagnosticsError> {
    tables
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.column(name).ok_or_else(|| DiagnosticsError::MissingColumn {
                column: name.to_string(),
                chain: i,
            })
        })
        .collect()
}

/// One report per parameter column (every column but `iteration`).
pub fn summarize_chains(tables: &[SampleTable]) -> Result<Vec<ParameterReport>, DiagnosticsError> {
    let Some(first) = tables.first() else {
        return Err(DiagnosticsError::TooFewChains(0));
    };
    for (i, t) in tables.iter().enumerate() {
        if t.n_rows() != first.n_rows() {
            return Err(DiagnosticsError::UnequalChains {
                chain: i,
                len: t.n_rows(),
                expected: first.n_rows(),
            });
        }
    }
    let mut out = Vec::new();
    for name in first.columns.iter().filter(|c| *c != "iteration") {
        let chains = column_per_chain(tables, name)?;
        let pooled: Vec<f64> = chains.concat();
        let summary = PosteriorSummary::from_draws(name, &pooled)?;
        let r_hat = if chains.len() >= 2 {
            match r_hat(&chains) {
                Ok(r) => Some(r),
                Err(DiagnosticsError::Degenerate) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        out.push(ParameterReport { summary, r_hat });
    }
    Ok(out)
}

/// Point estimate and interval of β for one replicate dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetEstimate {
    pub mean: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
}

impl DatasetEstimate {
    /// Pools the chains; `None` when any chain holds a non-finite draw, which
    /// excludes the replicate.
    pub fn from_chains(chains: &[Vec<f64>]) -> Result<Option<Self>, DiagnosticsError> {
        if chains.iter().flatten().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let pooled = chains.concat();
        let s = PosteriorSummary::from_draws("beta", &pooled)?;
        Ok(Some(DatasetEstimate {
            mean: s.mean,
            hdi_low: s.hdi_low,
            hdi_high: s.hdi_high,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub n_datasets: usize,
    pub n_excluded: usize,
    pub bias: f64,
    pub bias_se: f64,
    /// Absent when the true value is zero.
    pub relative_bias: Option<f64>,
    pub relative_bias_se: Option<f64>,
    pub mse: f64,
    pub mse_se: f64,
    pub coverage: f64,
    pub coverage_se: f64,
}

/// Bias, relative bias, MSE and HDI coverage with Monte Carlo standard errors.
pub fn score_simulation(
    estimates: &[DatasetEstimate],
    beta_true: f64,
) -> Result<PerfReport, DiagnosticsError> {
    let n = estimates.len();
    if n < 2 {
        return Err(DiagnosticsError::TooFewDatasets(n));
    }
    if estimates
        .iter()
        .any(|e| !(e.mean.is_finite() && e.hdi_low.is_finite() && e.hdi_high.is_finite()))
    {
        return Err(DiagnosticsError::NonFinite("dataset estimate".into()));
    }
    let mut est = estimates.to_vec();
    est.sort_by(|a, b| {
        a.mean
            .total_cmp(&b.mean)
            .then(a.hdi_low.total_cmp(&b.hdi_low))
            .then(a.hdi_high.total_cmp(&b.hdi_high))
    });
    let nf = n as f64;
    let mean = est.iter().map(|e| e.mean).sum::<f64>() / nf;
    let bias = mean - beta_true;
    let bias_se = (est.iter().map(|e| (e.mean - mean).powi(2)).sum::<f64>() / (nf * (nf - 1.0))).sqrt();
    let sq: Vec<f64> = est.iter().map(|e| (e.mean - beta_true).powi(2)).collect();
    let mse = sq.iter().sum::<f64>() / nf;
    let mse_se = (sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (nf * (nf - 1.0))).sqrt();
    let covered = est
        .iter()
        .filter(|e| e.hdi_low <= beta_true && beta_true <= e.hdi_high)
        .count();
    let coverage = covered as f64 / nf;
    let coverage_se = (coverage * (1.0 - coverage) / nf).sqrt();
    let (relative_bias, relative_bias_se) = if beta_true == 0.0 {
        (None, None)
    } else {
        (Some(bias / beta_true), Some(bias_se / beta_true.abs()))
    };
    Ok(PerfReport {
        n_datasets: n,
        n_excluded: 0,
        bias,
        bias_se,
        relative_bias,
        relative_bias_se,
        mse,
        mse_se,
        coverage,
        coverage_se,
    })
}

/// Scores replicate fits given as per-chain β draws, excluding replicates
/// with non-finite draws.
pub fn score_replicates(
    fits: &[Vec<Vec<f64>>],
    beta_true: f64,
) -> Result<PerfReport, DiagnosticsError> {
    let mut est = Vec::new();
    for chains in fits {
        if let Some(e) = DatasetEstimate::from_chains(chains)? {
            est.push(e);
        }
    }
    let mut r = score_simulation(&est, beta_true)?;
    r.n_excluded = fits.len() - est.len();
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolinPoint {
    pub x: f64,
    pub density: f64,
}

/// Gaussian kernel density on `n_grid` points spanning the draws padded by
/// three bandwidths (Silverman's rule).
pub fn violin(draws: &[f64], n_grid: usize) -> Result<Vec<ViolinPoint>, DiagnosticsError> {
    if draws.len() < 2 {
        return Err(DiagnosticsError::TooFewSamples {
            need: 2,
            got: draws.len(),
        });
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFinite("violin input".into()));
    }
    let s = sorted(draws);
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let q = |p: f64| s[((p * (n - 1.0)).round() as usize).min(s.len() - 1)];
    let iqr = q(0.75) - q(0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        _ => (s[0].abs() * 1e-3).max(1e-12),
    };
    let h = 0.9 * spread * n.powf(-0.2);
    let lo = s[0] - 3.0 * h;
    let hi = s[s.len() - 1] + 3.0 * h;
    let n_grid = n_grid.max(2);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok((0..n_grid)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (n_grid - 1) as f64;
            let density = norm
                * s.iter()
                    .map(|v| (-0.5 * ((x - v) / h).powi(2)).exp())
                    .sum::<f64>();
            ViolinPoint { x, density }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub chain: usize,
    pub iteration: f64,
    pub value: f64,
}

/// `(chain, iteration, value)` coordinates of one parameter.
pub fn trace(tables: &[SampleTable], parameter: &str) -> Result<Vec<TracePoint>, DiagnosticsError> {
    let mut out = Vec::new();
    for (chain, t) in tables.iter().enumerate() {
        let values = t.column(parameter).ok_or_else(|| DiagnosticsError::MissingColumn {
            column: parameter.to_string(),
            chain,
        })?;
        let its = t
            .column("iteration")
            .unwrap_or_else(|| (1..=values.len()).map(|i| i as f64).collect());
        out.extend(its.into_iter().zip(values).map(|(iteration, value)| TracePoint {
            chain,
            iteration,
            value,
        }));
    }
    Ok(out)
}
