use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{replicate_rng, StatsError};

/// Two statistics closer than this are treated as equal when counting
/// permuted statistics at least as extreme as the observed one.
const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationMode {
    /// Exact enumeration when the permutation space is at most
    /// `exact_limit`, Monte Carlo otherwise.
    #[default]
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub iterations: usize,
    pub seed: u64,
    pub mode: PermutationMode,
    pub exact_limit: u64,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig { iterations: 10_000, seed: 0, mode: PermutationMode::Auto, exact_limit: 100_000 }
    }
}

impl PermutationConfig {
    pub fn with_seed(seed: u64) -> Self {
        PermutationConfig { seed, ..Default::default() }
    }

    pub fn monte_carlo(iterations: usize, seed: u64) -> Self {
        PermutationConfig { iterations, seed, mode: PermutationMode::MonteCarlo, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    /// `mean(a) - mean(b)` on the observed labels.
    pub observed: f64,
    /// Two-tailed p-value.
    pub p_value: f64,
    pub exact: bool,
    /// Label assignments enumerated (exact) or sampled (Monte Carlo).
    pub permutations: u64,
    pub seed: u64,
}

/// The values of one block and how many of them carry label A.
struct Block {
    values: Vec<f64>,
    n_a: usize,
}

impl Block {
    fn is_degenerate(&self) -> bool {
        self.n_a == 0 || self.n_a == self.values.len()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Sums of every `k`-subset of `values`, one entry per subset.
fn subset_sums(values: &[f64], k: usize) -> Vec<f64> {
    fn go(values: &[f64], k: usize, start: usize, acc: f64, out: &mut Vec<f64>) {
        if k == 0 {
            out.push(acc);
            return;
        }
        for i in start..=values.len() - k {
            go(values, k - 1, i + 1, acc + values[i], out);
        }
    }
    let mut out = Vec::new();
    go(values, k, 0, 0.0, &mut out);
    out
}

/// Two-tailed permutation test of `mean(a) - mean(b)` with labels shuffled
/// only within blocks. Each observation is `(block key, value)`; blocks with a
/// single label are fixed. The identity permutation is part of the reference
/// distribution, so `p > 0`.
///
/// ```
/// use medeval::stats::{permutation_test, PermutationConfig};
///
/// let r = permutation_test(&[1.0; 4], &[0.0; 4], &PermutationConfig::default()).unwrap();
/// assert!(r.exact);
/// assert!((r.p_value - 2.0 / 70.0).abs() < 1e-12);
/// ```
pub fn permutation_test_blocked<K: Ord + Clone>(
    a: &[(K, f64)],
    b: &[(K, f64)],
    cfg: &PermutationConfig,
) -> Result<PermutationResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty("both arms need at least one rating".into()));
    }
    if a.iter().chain(b).any(|(_, v)| !v.is_finite()) {
        return Err(StatsError::InvalidArgument("ratings must be finite".into()));
    }
    let mut grouped: BTreeMap<K, Block> = BTreeMap::new();
    for (k, v) in a {
        let block = grouped.entry(k.clone()).or_insert(Block { values: Vec::new(), n_a: 0 });
        block.values.insert(block.n_a, *v);
        block.n_a += 1;
    }
    for (k, v) in b {
        grouped.entry(k.clone()).or_insert(Block { values: Vec::new(), n_a: 0 }).values.push(*v);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let total: f64 = a.iter().chain(b).map(|(_, v)| v).sum();
    let stat = |sum_a: f64| sum_a / na - (total - sum_a) / nb;
    let observed_sum: f64 = a.iter().map(|(_, v)| v).sum();
    let observed = stat(observed_sum);
    let threshold = observed.abs() - TOLERANCE;

    let fixed_sum: f64 = grouped.values().filter(|b| b.is_degenerate()).map(|b| b.values[..b.n_a].iter().sum::<f64>()).sum();
    let free: Vec<&Block> = grouped.values().filter(|b| !b.is_degenerate()).collect();
    if free.is_empty() {
        return Ok(PermutationResult { observed, p_value: 1.0, exact: true, permutations: 1, seed: cfg.seed });
    }

    let space: f64 = free.iter().map(|b| binomial(b.values.len(), b.n_a)).product();
    let exact = match cfg.mode {
        PermutationMode::Exact => true,
        PermutationMode::MonteCarlo => false,
        PermutationMode::Auto => space <= cfg.exact_limit as f64,
    };

    if exact {
        if space > 1e8 {
            return Err(StatsError::InvalidArgument(format!("permutation space {space:.3e} is too large to enumerate")));
        }
        // Convolve per-block subset sums into the distribution of sum(A).
        let mut sums = vec![fixed_sum];
        for block in &free {
            let options = subset_sums(&block.values, block.n_a);
            sums = sums.iter().flat_map(|s| options.iter().map(move |o| s + o)).collect();
        }
        let extreme = sums.iter().filter(|&&s| stat(s).abs() >= threshold).count();
        return Ok(PermutationResult {
            observed,
            p_value: extreme as f64 / sums.len() as f64,
            exact: true,
            permutations: sums.len() as u64,
            seed: cfg.seed,
        });
    }

    if cfg.iterations == 0 {
        return Err(StatsError::InvalidArgument("iterations must be positive".into()));
    }
    let extreme: usize = (0..cfg.iterations as u64)
        .into_par_iter()
        .map_init(Vec::new, |scratch: &mut Vec<f64>, i| {
            let mut rng = replicate_rng(cfg.seed, i);
            let mut sum_a = fixed_sum;
            for block in &free {
                scratch.clear();
                scratch.extend_from_slice(&block.values);
                // Partial Fisher-Yates: the first n_a slots get label A.
                for j in 0..block.n_a {
                    let k = rng.random_range(j..scratch.len());
                    scratch.swap(j, k);
                    sum_a += scratch[j];
                }
            }
            usize::from(stat(sum_a).abs() >= threshold)
        })
        .sum();
    Ok(PermutationResult {
        observed,
        p_value: (extreme + 1) as f64 / (cfg.iterations + 1) as f64,
        exact: false,
        permutations: cfg.iterations as u64,
        seed: cfg.seed,
    })
}

/// Unblocked test: every rating is exchangeable with every other.
pub fn permutation_test(a: &[f64], b: &[f64], cfg: &PermutationConfig) -> Result<PermutationResult, StatsError> {
    let a: Vec<((), f64)> = a.iter().map(|v| ((), *v)).collect();
    let b: Vec<((), f64)> = b.iter().map(|v| ((), *v)).collect();
    permutation_test_blocked(&a, &b, cfg)
}

/// Blocked Monte Carlo test for answers that carry several ratings each.
/// Every iteration draws one rating per answer uniformly, then permutes arm
/// labels within each block. The observed statistic is the difference of the
/// arms' mean answer-level means.
pub fn permutation_test_subsampled<K: Ord + Clone + Sync>(
    a: &[(K, Vec<f64>)],
    b: &[(K, Vec<f64>)],
    cfg: &PermutationConfig,
) -> Result<PermutationResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty("both arms need at least one answer".into()));
    }
    if let Some((_, _)) = a.iter().chain(b).find(|(_, r)| r.is_empty()) {
        return Err(StatsError::InvalidArgument("every answer needs at least one rating".into()));
    }
    if cfg.iterations == 0 {
        return Err(StatsError::InvalidArgument("iterations must be positive".into()));
    }
    let mean = |r: &[f64]| r.iter().sum::<f64>() / r.len() as f64;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let observed = a.iter().map(|(_, r)| mean(r)).sum::<f64>() / na - b.iter().map(|(_, r)| mean(r)).sum::<f64>() / nb;
    let threshold = observed.abs() - TOLERANCE;

    // Per block: the answers' rating lists, A answers first.
    let mut grouped: BTreeMap<K, (Vec<&[f64]>, usize)> = BTreeMap::new();
    for (k, r) in a {
        let e = grouped.entry(k.clone()).or_default();
        e.0.insert(e.1, r.as_slice());
        e.1 += 1;
    }
    for (k, r) in b {
        grouped.entry(k.clone()).or_default().0.push(r.as_slice());
    }
    let blocks: Vec<(Vec<&[f64]>, usize)> = grouped.into_values().collect();
    if blocks.iter().all(|(answers, n_a)| *n_a == 0 || *n_a == answers.len()) {
        return Ok(PermutationResult { observed, p_value: 1.0, exact: true, permutations: 1, seed: cfg.seed });
    }
    let extreme: usize = (0..cfg.iterations as u64)
        .into_par_iter()
        .map_init(Vec::new, |scratch: &mut Vec<f64>, i| {
            let mut rng = replicate_rng(cfg.seed, i);
            let (mut sum_a, mut sum_b) = (0.0, 0.0);
            for (answers, n_a) in &blocks {
                scratch.clear();
                scratch.extend(answers.iter().map(|r| r[rng.random_range(0..r.len())]));
                for j in 0..(*n_a).min(scratch.len()) {
                    if *n_a < scratch.len() {
                        let k = rng.random_range(j..scratch.len());
                        scratch.swap(j, k);
                    }
                    sum_a += scratch[j];
                }
                sum_b += scratch[*n_a..].iter().sum::<f64>();
            }
            usize::from((sum_a / na - sum_b / nb).abs() >= threshold)
        })
        .sum();
    Ok(PermutationResult {
        observed,
        p_value: (extreme + 1) as f64 / (cfg.iterations + 1) as f64,
        exact: false,
        permutations: cfg.iterations as u64,
        seed: cfg.seed,
    })
}
