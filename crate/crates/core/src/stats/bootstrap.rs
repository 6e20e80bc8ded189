use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{StatsError, StatsSummary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { iterations: 10_000, level: 0.95, seed: 0 }
    }
}

impl BootstrapConfig {
    pub fn with_seed(seed: u64) -> Self {
        BootstrapConfig { seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if self.iterations == 0 {
            return Err(StatsError::InvalidArgument("iterations must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(StatsError::InvalidArgument(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

/// The random stream for replicate `index` under `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Nearest-rank percentile interval: with `B` sorted replicates and
/// `alpha = 1 - level`, the endpoints are the replicates at ranks
/// `ceil(B * alpha / 2)` and `ceil(B * (1 - alpha / 2))`. Both endpoints are
/// therefore values that some replicate actually took.
pub fn percentile_interval(mut replicates: Vec<f64>, level: f64) -> (f64, f64) {
    replicates.sort_by(f64::total_cmp);
    let b = replicates.len() as f64;
    let alpha = 1.0 - level;
    let rank = |q: f64| ((b * q - 1e-9).ceil().max(1.0) as usize).min(replicates.len()) - 1;
    (replicates[rank(alpha / 2.0)], replicates[rank(1.0 - alpha / 2.0)])
}

/// Replicate statistics for `n` items resampled with replacement. `stat`
/// receives the replicate's generator (for any further randomness, such as
/// picking one rating per item) and the resampled item indices.
pub fn bootstrap_statistic<F>(n: usize, cfg: &BootstrapConfig, stat: F) -> Result<Vec<f64>, StatsError>
where
    F: Fn(&mut ChaCha8Rng, &[usize]) -> f64 + Sync,
{
    cfg.validate()?;
    if n == 0 {
        return Err(StatsError::Empty("bootstrap needs at least one item".into()));
    }
    Ok((0..cfg.iterations as u64)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |idx, i| {
                let mut rng = replicate_rng(cfg.seed, i);
                idx.clear();
                idx.extend((0..n).map(|_| rng.random_range(0..n)));
                stat(&mut rng, idx)
            },
        )
        .collect())
}

/// Mean computed as offsets from a reference value, so constant data yields
/// exactly that constant.
fn shifted_mean(reference: f64, values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), x| (s + (x - reference), n + 1));
    reference + s / n as f64
}

fn mean(v: &[f64]) -> f64 {
    shifted_mean(v[0], v.iter().copied())
}

/// Percentile CI of the mean of `values`.
///
/// ```
/// use medeval::stats::{bootstrap_ci, BootstrapConfig};
///
/// let ci = bootstrap_ci(&[0.5; 20], &BootstrapConfig::default()).unwrap();
/// assert_eq!(ci, (0.5, 0.5));
/// ```
pub fn bootstrap_ci(values: &[f64], cfg: &BootstrapConfig) -> Result<(f64, f64), StatsError> {
    Ok(bootstrap_mean(values, cfg)?.ci)
}

pub fn bootstrap_mean(values: &[f64], cfg: &BootstrapConfig) -> Result<StatsSummary, StatsError> {
    let reps = bootstrap_statistic(values.len(), cfg, |_, idx| shifted_mean(values[0], idx.iter().map(|&i| values[i])))?;
    Ok(StatsSummary {
        value: mean(values),
        ci: percentile_interval(reps, cfg.level),
        p_value: None,
        iterations: cfg.iterations,
        seed: cfg.seed,
    })
}

/// Items that each carry one or more ratings. Items are resampled with
/// replacement; with `single_rating` one rating per resampled item is drawn
/// uniformly, otherwise all of an item's ratings are pooled.
///
/// The point estimate matches the replicate statistic: the mean of item means
/// under `single_rating`, the pooled mean otherwise.
pub fn bootstrap_blocks(blocks: &[Vec<f64>], single_rating: bool, cfg: &BootstrapConfig) -> Result<StatsSummary, StatsError> {
    if let Some(i) = blocks.iter().position(Vec::is_empty) {
        return Err(StatsError::InvalidArgument(format!("item {i} has no ratings")));
    }
    let reference = blocks.first().map_or(0.0, |b| b[0]);
    let reps = bootstrap_statistic(blocks.len(), cfg, |rng, idx| {
        if single_rating {
            shifted_mean(reference, idx.iter().map(|&i| blocks[i][rng.random_range(0..blocks[i].len())]))
        } else {
            shifted_mean(reference, idx.iter().flat_map(|&i| blocks[i].iter().copied()))
        }
    })?;
    let value = if single_rating {
        shifted_mean(reference, blocks.iter().map(|b| mean(b)))
    } else {
        let all: Vec<f64> = blocks.iter().flatten().copied().collect();
        mean(&all)
    };
    Ok(StatsSummary { value, ci: percentile_interval(reps, cfg.level), p_value: None, iterations: cfg.iterations, seed: cfg.seed })
}

/// `mean(a) - mean(b)`, with each group resampled independently.
pub fn bootstrap_delta(a: &[f64], b: &[f64], cfg: &BootstrapConfig) -> Result<StatsSummary, StatsError> {
    cfg.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty("both groups need at least one value".into()));
    }
    let reps: Vec<f64> = (0..cfg.iterations as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(cfg.seed, i);
            let ma = shifted_mean(a[0], (0..a.len()).map(|_| a[rng.random_range(0..a.len())]));
            let mb = shifted_mean(b[0], (0..b.len()).map(|_| b[rng.random_range(0..b.len())]));
            ma - mb
        })
        .collect();
    Ok(StatsSummary {
        value: mean(a) - mean(b),
        ci: percentile_interval(reps, cfg.level),
        p_value: None,
        iterations: cfg.iterations,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn percentile_ranks() {
        let reps: Vec<f64> = (1..=10_000).map(f64::from).collect();
        assert_eq!(percentile_interval(reps, 0.95), (250.0, 9750.0));
        assert_eq!(percentile_interval(vec![3.0], 0.95), (3.0, 3.0));
        let reps: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile_interval(reps, 0.9), (1.0, 19.0));
    }

    #[test]
    fn two_item_support() {
        let cfg = BootstrapConfig { iterations: 2000, level: 0.95, seed: 3 };
        let reps = bootstrap_statistic(2, &cfg, |_, idx| idx.iter().map(|&i| i as f64).sum::<f64>() / 2.0).unwrap();
        assert!(reps.iter().all(|r| [0.0, 0.5, 1.0].contains(r)));
        let (lo, hi) = bootstrap_ci(&[0.0, 1.0], &cfg).unwrap();
        assert_eq!((lo, hi), (0.0, 1.0));
        let half = reps.iter().filter(|&&r| r == 0.5).count() as f64 / 2000.0;
        assert!((half - 0.5).abs() < 0.05);
    }

    #[test]
    fn errors() {
        assert!(bootstrap_ci(&[], &BootstrapConfig::default()).is_err());
        assert!(bootstrap_ci(&[1.0], &BootstrapConfig { iterations: 0, ..Default::default() }).is_err());
        assert!(bootstrap_ci(&[1.0], &BootstrapConfig { level: 1.0, ..Default::default() }).is_err());
        assert!(bootstrap_blocks(&[vec![1.0], vec![]], true, &BootstrapConfig::default()).is_err());
    }

    #[test]
    fn single_rating_subsampling() {
        // One item rated 0 and 1, one rated 1 three times.
        let blocks = vec![vec![0.0, 1.0], vec![1.0, 1.0, 1.0]];
        let cfg = BootstrapConfig { iterations: 4000, ..Default::default() };
        let single = bootstrap_blocks(&blocks, true, &cfg).unwrap();
        assert_eq!(single.value, 0.75);
        let pooled = bootstrap_blocks(&blocks, false, &cfg).unwrap();
        assert_eq!(pooled.value, 0.8);
    }

    #[test]
    fn delta_sign() {
        let s = bootstrap_delta(&[1.0; 10], &[0.0; 10], &BootstrapConfig::default()).unwrap();
        assert_eq!((s.value, s.ci), (1.0, (1.0, 1.0)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn seeded_determinism(values in proptest::collection::vec(0.0f64..1.0, 1..40), seed in any::<u64>()) {
            let cfg = BootstrapConfig { iterations: 300, level: 0.95, seed };
            prop_assert_eq!(bootstrap_mean(&values, &cfg).unwrap(), bootstrap_mean(&values, &cfg).unwrap());
        }

        #[test]
        fn constant_statistic_is_degenerate(c in -5.0f64..5.0, n in 1usize..30) {
            let cfg = BootstrapConfig { iterations: 200, ..Default::default() };
            prop_assert_eq!(bootstrap_ci(&vec![c; n], &cfg).unwrap(), (c, c));
        }
    }
}
