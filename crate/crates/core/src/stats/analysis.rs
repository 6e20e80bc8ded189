//! Tables of per-axis rates, confidence intervals, p-values and rater
//! agreement computed from a [`RatingsFile`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    bootstrap_blocks, classify_agreement, pairwise_summary, permutation_test_blocked, permutation_test_subsampled,
    randolph_kappa, Agreement, BootstrapConfig, Design, PairwiseAxisRatings, PairwiseChoice, PermutationConfig,
    RatingMatrix, RatingsFile, StatsError,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    pub iterations: usize,
    pub level: f64,
    pub seed: u64,
    /// Draw one rating per answer in bootstrap and permutation replicates.
    /// `None` turns it on when arms differ in how many ratings each answer has.
    pub single_rating: Option<bool>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig { iterations: 10_000, level: 0.95, seed: 0, single_rating: None }
    }
}

impl AnalyzeConfig {
    fn boot(&self) -> BootstrapConfig {
        BootstrapConfig { iterations: self.iterations, level: self.level, seed: self.seed }
    }

    fn perm(&self) -> PermutationConfig {
        PermutationConfig { iterations: self.iterations, seed: self.seed, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmValue {
    pub label: String,
    /// Answers (independent) or items (pairwise) contributing.
    pub n: usize,
    pub value: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementCell {
    pub kappa: f64,
    pub ci: (f64, f64),
    pub label: Agreement,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub axis: String,
    pub prompt: String,
    pub columns: Vec<ArmValue>,
    /// `(comparison label, p)`.
    pub p_values: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<AgreementCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub design: Design,
    pub study_id: String,
    pub arms: Vec<String>,
    pub records: usize,
    pub excluded: usize,
    pub single_rating: bool,
    pub iterations: usize,
    pub seed: u64,
    pub rows: Vec<AnalysisRow>,
}

pub fn analyze(file: &RatingsFile, cfg: &AnalyzeConfig) -> Result<AnalysisReport, StatsError> {
    file.validate()?;
    if file.records.is_empty() {
        return Err(StatsError::Empty("the ratings file has no records".into()));
    }
    let (rows, single) = match file.design {
        Design::Independent => independent_rows(file, cfg)?,
        Design::Pairwise => pairwise_rows(file, cfg)?,
    };
    Ok(AnalysisReport {
        design: file.design,
        study_id: file.study_id.clone(),
        arms: file.arms.clone(),
        records: file.records.len(),
        excluded: file.excluded.len(),
        single_rating: single,
        iterations: cfg.iterations,
        seed: cfg.seed,
        rows,
    })
}

fn agreement(matrix: RatingMatrix, cfg: &AnalyzeConfig) -> Option<AgreementCell> {
    if !matrix.items.iter().any(|(_, r)| r.iter().flatten().count() >= 2) {
        return None;
    }
    let s = randolph_kappa(&matrix, &cfg.boot()).ok()?;
    Some(AgreementCell { kappa: s.kappa, ci: s.ci, label: classify_agreement(s.kappa).ok()?, items: s.items_used })
}

fn independent_rows(file: &RatingsFile, cfg: &AnalyzeConfig) -> Result<(Vec<AnalysisRow>, bool), StatsError> {
    // answers[arm][item] = indices of records rating that answer
    let mut answers: BTreeMap<&str, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
    for (i, r) in file.records.iter().enumerate() {
        let arm = r.arm.as_deref().unwrap_or_default();
        answers.entry(arm).or_default().entry(r.item_id.as_str()).or_default().push(i);
    }
    let multiplicity: Vec<usize> = file
        .arms
        .iter()
        .map(|arm| answers.get(arm.as_str()).map_or(0, |a| a.values().map(Vec::len).max().unwrap_or(0)))
        .filter(|&m| m > 0)
        .collect();
    let single = cfg.single_rating.unwrap_or_else(|| multiplicity.windows(2).any(|w| w[0] != w[1]));

    let mut rows = Vec::new();
    for axis in &file.axes {
        let best = axis
            .best
            .as_deref()
            .ok_or_else(|| StatsError::Ratings(format!("axis {:?} has no best value", axis.name)))?;
        let blocks_for = |arm: &str| -> Vec<(&str, Vec<f64>)> {
            answers
                .get(arm)
                .map(|items| {
                    items
                        .iter()
                        .map(|(item, idx)| {
                            let v = idx.iter().map(|&i| f64::from(u8::from(file.records[i].values[&axis.name] == best))).collect();
                            (*item, v)
                        })
                        .collect()
                })
                .unwrap_or_default()
        };
        let mut columns = Vec::new();
        for arm in &file.arms {
            let blocks = blocks_for(arm);
            if blocks.is_empty() {
                columns.push(ArmValue { label: arm.clone(), n: 0, value: None, ci: None });
                continue;
            }
            let inner: Vec<Vec<f64>> = blocks.iter().map(|(_, v)| v.clone()).collect();
            let s = bootstrap_blocks(&inner, single, &cfg.boot())?;
            let value = if single {
                inner.iter().map(|b| b.iter().sum::<f64>() / b.len() as f64).sum::<f64>() / inner.len() as f64
            } else {
                let (s, n) = inner.iter().flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
                s / n as f64
            };
            columns.push(ArmValue { label: arm.clone(), n: inner.len(), value: Some(value), ci: Some(s.ci) });
        }
        let mut p_values = Vec::new();
        if let Some(reference) = file.arms.first() {
            let ref_blocks = blocks_for(reference);
            for other in file.arms.iter().skip(1) {
                let other_blocks = blocks_for(other);
                if ref_blocks.is_empty() || other_blocks.is_empty() {
                    continue;
                }
                let p = if single {
                    permutation_test_subsampled(&ref_blocks, &other_blocks, &cfg.perm())?
                } else {
                    let flat = |b: &[(&str, Vec<f64>)]| -> Vec<(String, f64)> {
                        b.iter().flat_map(|(item, v)| v.iter().map(move |x| (item.to_string(), *x))).collect()
                    };
                    permutation_test_blocked(&flat(&ref_blocks), &flat(&other_blocks), &cfg.perm())?
                };
                p_values.push((format!("{reference} vs {other}"), p.p_value));
            }
        }
        let matrix = RatingMatrix::new(
            axis.values.clone(),
            answers
                .iter()
                .flat_map(|(arm, items)| {
                    items.iter().map(move |(item, idx)| {
                        (format!("{arm}/{item}"), idx.iter().map(|&i| Some(file.records[i].values[&axis.name].clone())).collect())
                    })
                })
                .collect(),
        )?;
        rows.push(AnalysisRow {
            axis: axis.name.clone(),
            prompt: axis.prompt.clone(),
            columns,
            p_values,
            agreement: agreement(matrix, cfg),
        });
    }
    Ok((rows, single))
}

fn pairwise_rows(file: &RatingsFile, cfg: &AnalyzeConfig) -> Result<(Vec<AnalysisRow>, bool), StatsError> {
    let mut rows = Vec::new();
    let mut multi = false;
    for axis in &file.axes {
        let ratings: Vec<(String, PairwiseChoice)> = file
            .records
            .iter()
            .map(|r| {
                let v = &r.values[&axis.name];
                v.parse::<PairwiseChoice>().map(|c| (r.item_id.clone(), c)).map_err(StatsError::Ratings)
            })
            .collect::<Result<_, _>>()?;
        let mut per_item: BTreeMap<&str, Vec<Option<String>>> = BTreeMap::new();
        for r in &file.records {
            per_item.entry(r.item_id.as_str()).or_default().push(Some(r.values[&axis.name].clone()));
        }
        multi |= per_item.values().any(|v| v.len() > 1);
        let summary = pairwise_summary(&[PairwiseAxisRatings { axis: axis.name.clone(), ratings }], &cfg.boot(), &cfg.perm())?
            .remove(0);
        let cell = |label: &str, p: Option<super::Proportion>| ArmValue {
            label: label.to_string(),
            n: summary.items,
            value: p.map(|p| p.value),
            ci: p.map(|p| p.ci),
        };
        let matrix = RatingMatrix::new(
            axis.values.clone(),
            per_item.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        )?;
        rows.push(AnalysisRow {
            axis: axis.name.clone(),
            prompt: axis.prompt.clone(),
            columns: vec![cell(&file.arms[0], summary.a), cell("tie", summary.tie), cell(&file.arms[1], summary.b)],
            p_values: summary.p_value.map(|p| vec![(format!("{} vs {}", file.arms[0], file.arms[1]), p)]).unwrap_or_default(),
            agreement: agreement(matrix, cfg),
        });
    }
    Ok((rows, multi))
}

fn fmt_cell(v: &ArmValue) -> String {
    match (v.value, v.ci) {
        (Some(x), Some((lo, hi))) => format!("{x:.3} [{lo:.3}, {hi:.3}]"),
        _ => "n/a".into(),
    }
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

impl AnalysisReport {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["axis".to_string()];
        if let Some(row) = self.rows.first() {
            h.extend(row.columns.iter().map(|c| c.label.clone()));
            h.extend(row.p_values.iter().map(|(k, _)| format!("p ({k})")));
        }
        h.push("kappa".into());
        h
    }

    fn cells(&self) -> Vec<Vec<String>> {
        let width = self.rows.first().map_or(0, |r| r.p_values.len());
        self.rows
            .iter()
            .map(|r| {
                let mut c = vec![r.axis.clone()];
                c.extend(r.columns.iter().map(fmt_cell));
                c.extend(r.p_values.iter().map(|(_, p)| fmt_p(*p)));
                c.extend(std::iter::repeat_n("n/a".to_string(), width.saturating_sub(r.p_values.len())));
                c.push(match &r.agreement {
                    Some(a) => format!("{:.3} ({})", a.kappa, a.label),
                    None => "n/a".into(),
                });
                c
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.header().join("\t");
        out.push('\n');
        for row in self.cells() {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let header = self.header();
        let mut out = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
        for row in self.cells() {
            out.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{AxisSpec, RatingRecord, RATINGS_FORMAT};

    fn quick() -> AnalyzeConfig {
        AnalyzeConfig { iterations: 400, ..Default::default() }
    }

    fn record(task: usize, item: usize, rater: &str, arm: Option<&str>, axis: &str, v: &str) -> RatingRecord {
        RatingRecord {
            task_id: format!("t{task}"),
            item_id: format!("q{item}"),
            rater_id: rater.into(),
            arm: arm.map(String::from),
            values: BTreeMap::from([(axis.to_string(), v.to_string())]),
        }
    }

    fn independent(records: Vec<RatingRecord>) -> RatingsFile {
        RatingsFile {
            format: RATINGS_FORMAT.into(),
            design: Design::Independent,
            study_id: "s".into(),
            arms: vec!["m".into(), "p".into()],
            axes: vec![AxisSpec {
                name: "consensus".into(),
                prompt: "Supported by consensus?".into(),
                values: vec!["yes".into(), "no".into()],
                best: Some("yes".into()),
            }],
            records,
            excluded: vec![],
        }
    }

    #[test]
    fn independent_rates_and_p() {
        let mut records = Vec::new();
        for item in 0..30 {
            records.push(record(records.len(), item, "r1", Some("m"), "consensus", "yes"));
            records.push(record(records.len(), item, "r2", Some("p"), "consensus", if item < 15 { "yes" } else { "no" }));
        }
        let report = analyze(&independent(records), &quick()).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.columns[0].value, Some(1.0));
        assert_eq!(row.columns[1].value, Some(0.5));
        assert!(row.p_values[0].1 < 0.01);
        assert!(!report.single_rating);
        assert!(row.agreement.is_none());
        assert!(report.to_tsv().starts_with("axis\tm\tp\tp (m vs p)\tkappa\n"));
    }

    #[test]
    fn unequal_multiplicity_turns_on_subsampling() {
        let mut records = Vec::new();
        for item in 0..10 {
            for r in ["r1", "r2", "r3"] {
                records.push(record(records.len(), item, r, Some("m"), "consensus", "yes"));
            }
            records.push(record(records.len(), item, "r4", Some("p"), "consensus", "yes"));
        }
        let report = analyze(&independent(records), &quick()).unwrap();
        assert!(report.single_rating);
        let a = report.rows[0].agreement.as_ref().unwrap();
        assert_eq!((a.kappa, a.label), (1.0, Agreement::VeryGood));
    }

    #[test]
    fn missing_best_value_is_an_error() {
        let mut f = independent(vec![record(0, 0, "r", Some("m"), "consensus", "yes")]);
        f.axes[0].best = None;
        assert!(analyze(&f, &quick()).is_err());
    }
}
