//! Chain-quality diagnostics: rank-normalized bulk effective sample size,
//! split-R̂, and acceptance-rate extraction.
//!
//! ESS follows the rank-normalization recipe: pool all chains, replace values
//! by average ranks, map ranks through the standard-normal quantile function
//! z_i = Φ⁻¹((rᵢ − 3/8)/(S + 1/4)), then combine per-chain autocorrelations
//! with Geyer's initial-positive/monotone sequence truncation.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{MldaError, Result};
use crate::hierarchy::MldaStats;

fn validate_chains(chains: &[Vec<f64>]) -> Result<(usize, usize)> {
    if chains.is_empty() {
        return Err(MldaError::config("diagnostics require at least one chain"));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(MldaError::config("all chains must have equal length"));
    }
    if n < 4 {
        return Err(MldaError::config(
            "diagnostics require at least 4 samples per chain",
        ));
    }
    if chains.iter().flatten().any(|x| !x.is_finite()) {
        return Err(MldaError::config("chains must contain only finite values"));
    }
    Ok((chains.len(), n))
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().flatten().all(|&x| x == first)
}

/// Average ranks (ties share the mean of their rank range), 1-based.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let s = values.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) hold ties; 1-based ranks i+1..=j+1.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-normalize all chains jointly: pooled average ranks mapped through the
/// normal quantile function.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = pooled.len() as f64;
    let ranks = average_ranks(&pooled);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut z = ranks
        .iter()
        .map(|&r| normal.inverse_cdf((r - 0.375) / (s + 0.25)))
        .collect::<Vec<f64>>();
    chains
        .iter()
        .map(|c| z.drain(..c.len()).collect())
        .collect()
}

/// Biased-at-lag autocovariances γ̂_t = (1/N) Σ (x_i−x̄)(x_{i+t}−x̄) for
/// t = 0..max_lag, computed directly. Chains here are short enough that the
/// O(N·T) loop is not a bottleneck.
fn autocovariances(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    (0..=max_lag)
        .map(|t| {
            let mut acc = 0.0;
            for i in 0..(n - t) {
                acc += centered[i] * centered[i + t];
            }
            acc / n as f64
        })
        .collect()
}

/// Multi-chain ESS on already-transformed chains: combines within-chain
/// autocovariances with the between-chain variance, then applies Geyer's
/// initial-positive and monotone-sequence rules.
fn ess_from_transformed(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let max_lag = n - 1;

    let means: Vec<f64> = chains
        .iter()
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();
    // Per-chain unbiased variances and biased autocovariances.
    let autocovs: Vec<Vec<f64>> = chains.iter().map(|c| autocovariances(c, max_lag)).collect();
    let within_biased: f64 = autocovs.iter().map(|a| a[0]).sum::<f64>() / m as f64;
    let within = within_biased * n as f64 / (n - 1) as f64;
    let between = if m > 1 {
        let grand = means.iter().sum::<f64>() / m as f64;
        means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() * n as f64 / (m - 1) as f64
    } else {
        0.0
    };
    // var⁺: marginal posterior variance estimate.
    let var_plus = within * (n - 1) as f64 / n as f64 + if m > 1 { between / n as f64 } else { 0.0 };
    if var_plus <= 0.0 {
        return f64::NAN;
    }

    // ρ̂_t = 1 − (W − mean autocov_t)/var⁺; Geyer pairs P̂_k = ρ̂_2k + ρ̂_2k+1
    // accumulated while positive, each capped by its predecessor.
    let rho = |t: usize| -> f64 {
        let mean_autocov = autocovs.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        1.0 - (within - mean_autocov) / var_plus
    };

    let mut pair_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 <= max_lag {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        prev_pair = pair;
        pair_sum += pair;
        k += 1;
    }

    let total = (m * n) as f64;
    // Clamping τ from below enforces ESS ≤ total · log10(total), which keeps
    // antithetic (negatively correlated) chains from reporting unbounded ESS.
    let tau = (-1.0 + 2.0 * pair_sum).max(1.0 / total.log10());
    total / tau
}

/// Rank-normalized bulk effective sample size across one or more chains of
/// equal length. Constant chains are rejected.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> Result<f64> {
    validate_chains(chains)?;
    if is_constant(chains) {
        return Err(MldaError::config(
            "effective sample size is undefined for constant chains",
        ));
    }
    let transformed = rank_normalize(chains);
    let ess = ess_from_transformed(&transformed);
    if !ess.is_finite() || ess <= 0.0 {
        return Err(MldaError::numerical(
            "effective_sample_size",
            format!("degenerate ESS estimate {ess}"),
        ));
    }
    Ok(ess)
}

/// Split-R̂ on rank-normalized values: each chain is halved, and
/// R̂ = sqrt((W_b + V_m)/W_b) where W_b is the mean per-split biased variance
/// and V_m the variance of split means. Identical split means and variances
/// give exactly 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    validate_chains(chains)?;
    if is_constant(chains) {
        return Err(MldaError::config(
            "split R-hat is undefined for constant chains",
        ));
    }

    // Drop the last sample of odd-length chains so halves match.
    let truncated: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| c[..c.len() - c.len() % 2].to_vec())
        .collect();
    let transformed = rank_normalize(&truncated);
    let splits: Vec<&[f64]> = transformed
        .iter()
        .flat_map(|c| {
            let half = c.len() / 2;
            [&c[..half], &c[half..]]
        })
        .collect();

    let m = splits.len();
    let mut means = Vec::with_capacity(m);
    let mut variances = Vec::with_capacity(m);
    for split in &splits {
        let n = split.len() as f64;
        let mean = split.iter().sum::<f64>() / n;
        let var = split.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        means.push(mean);
        variances.push(var);
    }
    let w = variances.iter().sum::<f64>() / m as f64;
    if w <= 0.0 {
        return Err(MldaError::numerical(
            "split_rhat",
            "within-split variance vanished".to_string(),
        ));
    }
    let grand = means.iter().sum::<f64>() / m as f64;
    let vm = means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1) as f64;
    Ok(((w + vm) / w).sqrt())
}

/// Post-burn-in acceptance rate over distinct proposals at one level.
pub fn acceptance_rate(stats: &MldaStats, level: usize) -> Result<f64> {
    if level >= stats.n_levels() {
        return Err(MldaError::config(format!(
            "level {level} out of range for {}-level statistics",
            stats.n_levels()
        )));
    }
    stats.acceptance_rate(level)
}
