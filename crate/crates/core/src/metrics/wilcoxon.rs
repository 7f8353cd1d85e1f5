//! Two-sided Wilcoxon rank-sum test.
//!
//! Ties receive midranks. Up to [`EXACT_LIMIT`] pooled observations the
//! p-value comes from the exact permutation distribution of the rank sum;
//! above it a normal approximation with tie and continuity corrections is
//! used. Two-sided p is `min(1, 2 * min(P(W <= w), P(W >= w)))`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest pooled sample size handled by exact enumeration.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSumTest {
    /// Rank sum of the first sample.
    pub statistic: f64,
    pub p_value: f64,
    pub method: PValueMethod,
}

/// 1-based midranks of `values` in their original order.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    doubled_midranks(values).into_iter().map(|d| d as f64 / 2.0).collect()
}

/// Twice the midranks, which are always integers.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i+1 ..= j+1 share (i+1 + j+1)/2.
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

fn validate(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("rank-sum sample"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN in rank-sum sample".into()));
    }
    Ok(())
}

fn pooled(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

/// Exact two-sided p-value from the full permutation distribution of the
/// rank sum, counted by dynamic programming over doubled midranks.
pub fn exact_p_value(a: &[f64], b: &[f64]) -> Result<f64> {
    validate(a, b)?;
    let n = a.len();
    let total_n = a.len() + b.len();
    if total_n > 120 {
        return Err(Error::InvalidArgument(format!(
            "exact rank-sum distribution limited to 120 observations, got {total_n}"
        )));
    }
    let ranks = doubled_midranks(&pooled(a, b));
    let observed: u64 = ranks[..n].iter().sum();
    let max_sum: usize = ranks.iter().sum::<u64>() as usize;
    // ways[k][s]: subsets of size k with doubled rank sum s.
    let mut ways = vec![vec![0u128; max_sum + 1]; n + 1];
    ways[0][0] = 1;
    for &r in &ranks {
        let r = r as usize;
        for k in (1..=n).rev() {
            let (lower, upper) = ways.split_at_mut(k);
            let prev = &lower[k - 1];
            let cur = &mut upper[0];
            for s in (r..=max_sum).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    let dist = &ways[n];
    let total: u128 = dist.iter().sum();
    let lo: u128 = dist[..=observed as usize].iter().sum();
    let hi: u128 = dist[observed as usize..].iter().sum();
    let tail = lo.min(hi) as f64 / total as f64;
    Ok((2.0 * tail).min(1.0))
}

/// Normal approximation with tie-corrected variance and a 0.5 continuity
/// correction.
pub fn normal_p_value(a: &[f64], b: &[f64]) -> Result<f64> {
    validate(a, b)?;
    let (n, m) = (a.len() as f64, b.len() as f64);
    let big_n = n + m;
    let all = pooled(a, b);
    let ranks = midranks(&all);
    let w: f64 = ranks[..a.len()].iter().sum();
    let mut sorted = all.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let mean = n * (big_n + 1.0) / 2.0;
    let var = if big_n > 1.0 {
        n * m / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)))
    } else {
        0.0
    };
    if var <= 0.0 {
        return Ok(1.0);
    }
    let dev = w - mean;
    let z = (dev - 0.5 * dev.signum()) / var.sqrt();
    // 2 * Phi(-|z|)
    Ok(erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0))
}

/// Two-sided rank-sum test of `a` against `b`.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<RankSumTest> {
    validate(a, b)?;
    let ranks = midranks(&pooled(a, b));
    let statistic = ranks[..a.len()].iter().sum();
    let (p_value, method) = if a.len() + b.len() <= EXACT_LIMIT {
        (exact_p_value(a, b)?, PValueMethod::Exact)
    } else {
        (normal_p_value(a, b)?, PValueMethod::Normal)
    };
    Ok(RankSumTest {
        statistic,
        p_value,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn separated_triplets() {
        let t = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.statistic, 6.0);
        assert_eq!(t.method, PValueMethod::Exact);
        assert!((t.p_value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn identical_samples() {
        let a = [3.0, 1.0, 4.0, 1.0, 5.0];
        let t = wilcoxon_rank_sum(&a, &a).unwrap();
        assert_eq!(t.p_value, 1.0);
    }

    #[test]
    fn all_tied_normal() {
        let a = vec![2.0; 15];
        assert_eq!(normal_p_value(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn empty_sample_errors() {
        assert!(wilcoxon_rank_sum(&[], &[1.0]).is_err());
        assert!(wilcoxon_rank_sum(&[1.0], &[]).is_err());
    }

    #[test]
    fn large_samples_use_normal() {
        let a: Vec<f64> = (0..15).map(f64::from).collect();
        let b: Vec<f64> = (0..15).map(|i| f64::from(i) + 0.5).collect();
        let t = wilcoxon_rank_sum(&a, &b).unwrap();
        assert_eq!(t.method, PValueMethod::Normal);
        assert!(t.p_value > 0.5);
    }
}
