use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{bootstrap_statistic, percentile_interval, BootstrapConfig, StatsError};

/// Items (answers) by raters. Missing cells are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    pub categories: Vec<String>,
    pub items: Vec<(String, Vec<Option<String>>)>,
}

impl RatingMatrix {
    pub fn new(categories: Vec<String>, items: Vec<(String, Vec<Option<String>>)>) -> Result<Self, StatsError> {
        let m = RatingMatrix { categories, items };
        m.validate()?;
        Ok(m)
    }

    /// Builds the grid from `(item, category)` pairs, one column per rating.
    pub fn from_ratings<'a>(categories: Vec<String>, ratings: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, StatsError> {
        let mut items: BTreeMap<&str, Vec<Option<String>>> = BTreeMap::new();
        for (item, value) in ratings {
            items.entry(item).or_default().push(Some(value.to_string()));
        }
        RatingMatrix::new(categories, items.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    fn validate(&self) -> Result<(), StatsError> {
        if self.categories.len() < 2 {
            return Err(StatsError::InvalidArgument("kappa needs at least two categories".into()));
        }
        for (id, row) in &self.items {
            if let Some(v) = row.iter().flatten().find(|v| !self.categories.contains(v)) {
                return Err(StatsError::InvalidArgument(format!("item {id}: {v:?} is not one of the categories")));
            }
        }
        Ok(())
    }

    /// Pairwise agreement proportion of each item with at least two ratings.
    fn item_agreements(&self) -> (Vec<f64>, usize) {
        let mut excluded = 0;
        let mut out = Vec::with_capacity(self.items.len());
        for (id, row) in &self.items {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for v in row.iter().flatten() {
                *counts.entry(v.as_str()).or_default() += 1;
            }
            let n: usize = counts.values().sum();
            if n < 2 {
                log::warn!("item {id} has {n} rating(s); excluded from kappa");
                excluded += 1;
                continue;
            }
            let agree: usize = counts.values().map(|c| c * (c - 1)).sum();
            out.push(agree as f64 / (n * (n - 1)) as f64);
        }
        (out, excluded)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaSummary {
    pub kappa: f64,
    pub ci: (f64, f64),
    /// Mean observed pairwise agreement.
    pub observed_agreement: f64,
    pub categories: usize,
    pub items_used: usize,
    pub items_excluded: usize,
}

fn kappa_from(agreements: impl Iterator<Item = f64>, n: usize, q: usize) -> f64 {
    let po = agreements.sum::<f64>() / n as f64;
    let chance = 1.0 / q as f64;
    (po - chance) / (1.0 - chance)
}

/// Randolph's free-marginal multirater kappa without a CI.
///
/// ```
/// use medeval::stats::{randolph_kappa_value, RatingMatrix};
///
/// let m = RatingMatrix::from_ratings(
///     vec!["A".into(), "B".into()],
///     [("1", "A"), ("1", "A"), ("1", "B"), ("2", "A"), ("2", "A"), ("2", "A")],
/// )
/// .unwrap();
/// assert!((randolph_kappa_value(&m).unwrap() - 1.0 / 3.0).abs() < 1e-12);
/// ```
pub fn randolph_kappa_value(matrix: &RatingMatrix) -> Result<f64, StatsError> {
    matrix.validate()?;
    let (agreements, _) = matrix.item_agreements();
    if agreements.is_empty() {
        return Err(StatsError::Empty("no item has at least two ratings".into()));
    }
    Ok(kappa_from(agreements.iter().copied(), agreements.len(), matrix.categories.len()))
}

/// Randolph's kappa, `(Po - 1/q) / (1 - 1/q)` where `Po` is the mean over
/// items of the proportion of agreeing rater pairs, with an item-bootstrap CI.
/// Items with fewer than two ratings are excluded with a warning.
pub fn randolph_kappa(matrix: &RatingMatrix, cfg: &BootstrapConfig) -> Result<KappaSummary, StatsError> {
    matrix.validate()?;
    let (agreements, excluded) = matrix.item_agreements();
    if agreements.is_empty() {
        return Err(StatsError::Empty("no item has at least two ratings".into()));
    }
    let q = matrix.categories.len();
    let n = agreements.len();
    let kappa = kappa_from(agreements.iter().copied(), n, q);
    let reps = bootstrap_statistic(n, cfg, |_, idx| kappa_from(idx.iter().map(|&i| agreements[i]), n, q))?;
    Ok(KappaSummary {
        kappa,
        ci: percentile_interval(reps, cfg.level),
        observed_agreement: agreements.iter().sum::<f64>() / n as f64,
        categories: q,
        items_used: n,
        items_excluded: excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    VeryGood,
    Good,
    BelowGood,
}

impl std::fmt::Display for Agreement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Agreement::VeryGood => "very good",
            Agreement::Good => "good",
            Agreement::BelowGood => "below good",
        })
    }
}

/// `kappa > 0.8` is very good and `kappa > 0.6` good.
pub fn classify_agreement(kappa: f64) -> Result<Agreement, StatsError> {
    if !(-1.0..=1.0).contains(&kappa) {
        return Err(StatsError::InvalidArgument(format!("kappa must lie in [-1, 1], got {kappa}")));
    }
    Ok(if kappa > 0.8 {
        Agreement::VeryGood
    } else if kappa > 0.6 {
        Agreement::Good
    } else {
        Agreement::BelowGood
    })
}
