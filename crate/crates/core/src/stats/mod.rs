//! Statistics used to analyse benchmark runs and human ratings.
//!
//! Every randomized routine takes an explicit seed. Replicate `i` draws from
//! its own ChaCha8 stream derived from `(seed, i)`, so results are
//! bit-for-bit reproducible regardless of how replicates are scheduled
//! across threads.

mod analysis;
mod binomial;
mod bootstrap;
mod kappa;
mod pairwise;
mod permutation;
mod ratings;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analysis::{analyze, AnalysisReport, AnalysisRow, AnalyzeConfig, ArmValue};
pub use binomial::binomial_ci;
pub use bootstrap::{
    bootstrap_blocks, bootstrap_ci, bootstrap_delta, bootstrap_mean, bootstrap_statistic, percentile_interval,
    replicate_rng, BootstrapConfig,
};
pub use kappa::{classify_agreement, randolph_kappa, randolph_kappa_value, Agreement, KappaSummary, RatingMatrix};
pub use pairwise::{pairwise_summary, PairwiseAxisRatings, PairwiseChoice, PairwiseRow, Proportion};
pub use permutation::{
    permutation_test, permutation_test_blocked, permutation_test_subsampled, PermutationConfig, PermutationMode,
    PermutationResult,
};
pub use ratings::{AxisSpec, Design, Exclusion, RatingRecord, RatingsFile, RATINGS_FORMAT};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid ratings file: {0}")]
    Ratings(String),
}

/// A point estimate with its confidence interval and, where relevant, a
/// permutation p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub value: f64,
    pub ci: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
}
