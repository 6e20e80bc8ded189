use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{bootstrap_blocks, permutation_test_blocked, BootstrapConfig, PermutationConfig, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairwiseChoice {
    A,
    B,
    #[serde(rename = "tie")]
    Tie,
}

impl std::str::FromStr for PairwiseChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(PairwiseChoice::A),
            "B" | "b" => Ok(PairwiseChoice::B),
            "tie" | "Tie" | "TIE" => Ok(PairwiseChoice::Tie),
            _ => Err(format!("pairwise choice must be A, B or tie, got {s:?}")),
        }
    }
}

/// All ratings of one axis as `(item id, choice)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseAxisRatings {
    pub axis: String,
    pub ratings: Vec<(String, PairwiseChoice)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub value: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub axis: String,
    pub items: usize,
    pub ratings: usize,
    /// `None` when the axis has no ratings.
    pub a: Option<Proportion>,
    pub b: Option<Proportion>,
    pub tie: Option<Proportion>,
    /// Permutation test of A-preferred against B-preferred rates, blocked by item.
    pub p_value: Option<f64>,
}

/// Per-axis A / B / tie proportions with bootstrap CIs and a blocked
/// permutation p-value. Items rated more than once contribute the mean of
/// their ratings to the point estimate and one random rating per replicate.
pub fn pairwise_summary(
    axes: &[PairwiseAxisRatings],
    boot: &BootstrapConfig,
    perm: &PermutationConfig,
) -> Result<Vec<PairwiseRow>, StatsError> {
    axes.iter().map(|axis| axis_row(axis, boot, perm)).collect()
}

fn axis_row(axis: &PairwiseAxisRatings, boot: &BootstrapConfig, perm: &PermutationConfig) -> Result<PairwiseRow, StatsError> {
    let mut by_item: BTreeMap<&str, Vec<PairwiseChoice>> = BTreeMap::new();
    for (item, c) in &axis.ratings {
        by_item.entry(item.as_str()).or_default().push(*c);
    }
    if by_item.is_empty() {
        return Ok(PairwiseRow { axis: axis.axis.clone(), items: 0, ratings: 0, a: None, b: None, tie: None, p_value: None });
    }
    let multi = by_item.values().any(|v| v.len() > 1);
    let proportion = |choice: PairwiseChoice| -> Result<Proportion, StatsError> {
        let blocks: Vec<Vec<f64>> =
            by_item.values().map(|cs| cs.iter().map(|c| f64::from(u8::from(*c == choice))).collect()).collect();
        let s = bootstrap_blocks(&blocks, multi, boot)?;
        let value = if multi {
            blocks.iter().map(|b| b.iter().sum::<f64>() / b.len() as f64).sum::<f64>() / blocks.len() as f64
        } else {
            blocks.iter().map(|b| b[0]).sum::<f64>() / blocks.len() as f64
        };
        Ok(Proportion { value, ci: s.ci })
    };
    let indicator = |choice: PairwiseChoice| -> Vec<(&str, f64)> {
        axis.ratings.iter().map(|(item, c)| (item.as_str(), f64::from(u8::from(*c == choice)))).collect()
    };
    let p = permutation_test_blocked(&indicator(PairwiseChoice::A), &indicator(PairwiseChoice::B), perm)?;
    Ok(PairwiseRow {
        axis: axis.axis.clone(),
        items: by_item.len(),
        ratings: axis.ratings.len(),
        a: Some(proportion(PairwiseChoice::A)?),
        b: Some(proportion(PairwiseChoice::B)?),
        tie: Some(proportion(PairwiseChoice::Tie)?),
        p_value: Some(p.p_value),
    })
}
