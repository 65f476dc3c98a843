//! Rank-normalized split R-hat and bulk effective sample size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::Draws;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Convergence summary for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub rhat: f64,
    pub ess_bulk: f64,
    /// Constant across all draws; R-hat and ESS are undefined.
    pub degenerate: bool,
}

/// Convergence summary for a set of draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n_chains: usize,
    pub draws_per_chain: usize,
    pub divergences: usize,
    pub max_rhat: f64,
    pub min_ess_bulk: f64,
    pub parameters: Vec<ParamDiagnostics>,
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of fractional ranks, ties averaged.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut flat: Vec<(f64, usize)> = chains.iter().flatten().copied().zip(0..).collect();
    let s = flat.len();
    flat.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && flat[j + 1].0 == flat[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for item in &flat[i..=j] {
            ranks[item.1] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::standard();
    let mut k = 0;
    chains
        .iter()
        .map(|c| {
            c.iter()
                .map(|_| {
                    let z = normal.inverse_cdf((ranks[k] - 0.375) / (s as f64 + 0.25));
                    k += 1;
                    z
                })
                .collect()
        })
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n * sample_var(&means);
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains.iter().flatten().next().copied();
    first.is_none_or(|f| chains.iter().flatten().all(|&v| v == f))
}

fn validate(chains: &[Vec<f64>]) -> Result<()> {
    if chains.len() < 2 {
        return Err(Error::invalid("at least two chains are required for R-hat"));
    }
    let n = chains[0].len();
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("chains must have equal length of at least 4"));
    }
    if chains.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("draws contain non-finite values"));
    }
    Ok(())
}

/// Rank-normalized split R-hat: the larger of the bulk and folded versions.
/// `NaN` for constant draws.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    validate(chains)?;
    if is_constant(chains) {
        return Ok(f64::NAN);
    }
    let sp = split(chains);
    let bulk = basic_rhat(&rank_normalize(&sp));
    let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let median = quantile_sorted(&all, 0.5);
    let folded: Vec<Vec<f64>> = sp
        .iter()
        .map(|c| c.iter().map(|v| (v - median).abs()).collect())
        .collect();
    let tail = if is_constant(&folded) {
        f64::NAN
    } else {
        basic_rhat(&rank_normalize(&folded))
    };
    Ok(if tail.is_nan() { bulk } else { bulk.max(tail) })
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n - lag {
        s += (x[i] - m) * (x[i + lag] - m);
    }
    s / n as f64
}

/// Effective sample size with Geyer's initial monotone sequence.
fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov_mean = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let nf = n as f64;
    let mean_var = acov_mean(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    let rho_at = |lag: usize| 1.0 - (mean_var - acov_mean(lag)) / var_plus;

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho_at(1);
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 4 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho_at(t + 1);
        rho_odd = rho_at(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = rho_even;
    }
    let mut t = 1;
    while t + 3 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tail = if max_t + 1 < n { rho[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    total / tau
}

/// Bulk effective sample size on rank-normalized split chains. `NaN` for
/// constant draws.
pub fn ess_bulk(chains: &[Vec<f64>]) -> Result<f64> {
    validate(chains)?;
    if is_constant(chains) {
        return Ok(f64::NAN);
    }
    Ok(ess_raw(&rank_normalize(&split(chains))))
}

/// Per-parameter convergence diagnostics.
pub fn diagnose<T: Real>(draws: &Draws<T>) -> Result<DiagnosticsReport> {
    if draws.n_chains() < 2 {
        return Err(Error::invalid(format!(
            "convergence diagnostics need at least 2 chains, got {}",
            draws.n_chains()
        )));
    }
    let mut parameters = Vec::with_capacity(draws.names().len());
    for (k, name) in draws.names().iter().enumerate() {
        let col = draws.column(k);
        let all: Vec<f64> = col.iter().flatten().copied().collect();
        let degenerate = is_constant(&col);
        parameters.push(ParamDiagnostics {
            name: name.clone(),
            mean: mean(&all),
            sd: if all.len() > 1 {
                sample_var(&all).sqrt()
            } else {
                f64::NAN
            },
            rhat: rhat(&col)?,
            ess_bulk: ess_bulk(&col)?,
            degenerate,
        });
    }
    let live = parameters.iter().filter(|p| !p.degenerate);
    let max_rhat = live.clone().map(|p| p.rhat).fold(f64::NAN, f64::max);
    let min_ess_bulk = live.map(|p| p.ess_bulk).fold(f64::NAN, f64::min);
    Ok(DiagnosticsReport {
        n_chains: draws.n_chains(),
        draws_per_chain: draws.chains()[0].values.len(),
        divergences: draws.total_divergences(),
        max_rhat,
        min_ess_bulk,
        parameters,
    })
}
