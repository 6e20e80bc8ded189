//! Test-set contamination scanning.
//!
//! A question overlaps the corpus when its whole query text appears verbatim
//! in some document, or when at least `min_len` contiguous characters of it
//! do. The query is the question stem, preceded by the context passage when
//! there is one and `include_context` is set. Options and answers are never
//! part of the query.
//!
//! ```
//! use medeval::overlap::{build_corpus_index, question_overlaps, Document, IndexConfig};
//! use medeval::{DatasetTag, Letter, MultipleChoiceQuestion};
//!
//! let stem = "Which vitamin deficiency causes scurvy?";
//! let doc = Document::new("web/1", format!("Trivia night. {stem} Vitamin C."));
//! let index = build_corpus_index(vec![doc], IndexConfig::default()).unwrap();
//! let q = MultipleChoiceQuestion {
//!     id: "q1".into(),
//!     stem: stem.into(),
//!     context: None,
//!     options: [(Letter::new('A').unwrap(), "C".to_string())].into(),
//!     gold: Letter::new('A').unwrap(),
//!     dataset: DatasetTag::new("demo"),
//! };
//! let v = question_overlaps(&q, &index, 512);
//! assert!(v.overlapping);
//! assert_eq!(v.matched_document.as_deref(), Some("web/1"));
//! ```

mod corpus;
mod index;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::MultipleChoiceQuestion;
use crate::stats::{bootstrap_delta, bootstrap_mean, BootstrapConfig, StatsError};

pub use corpus::{load_corpus, read_length_prefixed, write_length_prefixed, LENGTH_PREFIXED_EXTENSION};
pub use index::{
    build_corpus_index, CorpusIndex, Document, Hit, IndexConfig, IndexError, IndexStats, Normalization, DEFAULT_GRAM,
    DEFAULT_MAX_DOC_CHARS,
};

pub const DEFAULT_MIN_LEN: usize = 512;

#[derive(Debug, Error)]
pub enum OverlapError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("question {0:?} has no correctness entry")]
    MissingCorrectness(String),
    #[error("question {0:?} appears more than once")]
    DuplicateQuestion(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOptions {
    pub min_len: usize,
    pub include_context: bool,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions { min_len: DEFAULT_MIN_LEN, include_context: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    /// The whole query text occurs in a document.
    Entire,
    /// A run of at least `min_len` characters occurs in a document.
    Window,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapVerdict {
    pub question_id: String,
    pub overlapping: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_document: Option<String>,
    /// Characters in the matched run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<MatchRule>,
}

impl OverlapVerdict {
    fn clean(id: &str) -> Self {
        OverlapVerdict { question_id: id.to_string(), overlapping: false, matched_document: None, matched_length: None, rule: None }
    }
}

/// The text searched for in the corpus, before normalization.
pub fn query_text(question: &MultipleChoiceQuestion, include_context: bool) -> String {
    match (&question.context, include_context) {
        (Some(ctx), true) if !ctx.is_empty() => format!("{ctx}\n{}", question.stem),
        _ => question.stem.clone(),
    }
}

pub fn question_overlaps(question: &MultipleChoiceQuestion, index: &CorpusIndex, min_len: usize) -> OverlapVerdict {
    question_overlaps_with(question, index, &QueryOptions { min_len, ..Default::default() })
}

pub fn question_overlaps_with(question: &MultipleChoiceQuestion, index: &CorpusIndex, opts: &QueryOptions) -> OverlapVerdict {
    let query = index.config().normalization.apply(&query_text(question, opts.include_context));
    text_overlaps(&question.id, &query, index, opts.min_len)
}

/// `query` must already be normalized.
pub fn text_overlaps(id: &str, query: &str, index: &CorpusIndex, min_len: usize) -> OverlapVerdict {
    if query.is_empty() {
        return OverlapVerdict::clean(id);
    }
    if let Some(doc) = index.find_exact(query) {
        return OverlapVerdict {
            question_id: id.to_string(),
            overlapping: true,
            matched_document: Some(index.document_id(doc).to_string()),
            matched_length: Some(query.chars().count()),
            rule: Some(MatchRule::Entire),
        };
    }
    let scalars = index::to_scalars(query);
    match index.find_window(&scalars, min_len) {
        Some(hit) => OverlapVerdict {
            question_id: id.to_string(),
            overlapping: true,
            matched_document: Some(index.document_id(hit.doc).to_string()),
            matched_length: Some(hit.len),
            rule: Some(MatchRule::Window),
        },
        None => OverlapVerdict::clean(id),
    }
}

/// Verdicts for every question, in input order. Queries run in parallel.
pub fn scan(questions: &[MultipleChoiceQuestion], index: &CorpusIndex, opts: &QueryOptions) -> Vec<OverlapVerdict> {
    questions.par_iter().map(|q| question_overlaps_with(q, index, opts)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub dataset: String,
    pub min_len: usize,
    pub total: usize,
    pub overlapping: usize,
    /// Accuracy on questions without overlap; `None` when there are none.
    pub without_overlap: Option<Estimate>,
    pub with_overlap: Option<Estimate>,
    /// `without - with`; `None` when either side is empty.
    pub delta: Option<Estimate>,
}

impl OverlapReport {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.overlapping as f64 / self.total as f64
        }
    }

    /// E.g. `12/1273 (0.9%)`.
    pub fn fraction_label(&self) -> String {
        format!("{}/{} ({:.1}%)", self.overlapping, self.total, 100.0 * self.fraction())
    }
}

/// Splits questions by verdict and compares accuracy across the two groups.
pub fn overlap_report(
    dataset: &str,
    verdicts: &[OverlapVerdict],
    correct: &BTreeMap<String, bool>,
    min_len: usize,
    cfg: &BootstrapConfig,
) -> Result<OverlapReport, OverlapError> {
    let mut seen = BTreeSet::new();
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for v in verdicts {
        if !seen.insert(v.question_id.as_str()) {
            return Err(OverlapError::DuplicateQuestion(v.question_id.clone()));
        }
        let ok = *correct.get(&v.question_id).ok_or_else(|| OverlapError::MissingCorrectness(v.question_id.clone()))?;
        if v.overlapping { &mut with } else { &mut without }.push(f64::from(u8::from(ok)));
    }
    let estimate = |xs: &[f64]| -> Result<Option<Estimate>, StatsError> {
        if xs.is_empty() {
            return Ok(None);
        }
        let s = bootstrap_mean(xs, cfg)?;
        Ok(Some(Estimate { value: s.value, ci: s.ci }))
    };
    let delta = if with.is_empty() || without.is_empty() {
        None
    } else {
        let s = bootstrap_delta(&without, &with, cfg)?;
        Some(Estimate { value: s.value, ci: s.ci })
    };
    Ok(OverlapReport {
        dataset: dataset.to_string(),
        min_len,
        total: verdicts.len(),
        overlapping: with.len(),
        without_overlap: estimate(&without)?,
        with_overlap: estimate(&with)?,
        delta,
    })
}

fn pct(e: &Option<Estimate>) -> String {
    match e {
        Some(e) => format!("{:.1} [{:.1}, {:.1}]", 100.0 * e.value, 100.0 * e.ci.0, 100.0 * e.ci.1),
        None => "n/a".into(),
    }
}

const HEADER: [&str; 6] = ["dataset", "min_len", "overlap", "without overlap", "with overlap", "delta"];

fn cells(r: &OverlapReport) -> [String; 6] {
    [r.dataset.clone(), r.min_len.to_string(), r.fraction_label(), pct(&r.without_overlap), pct(&r.with_overlap), pct(&r.delta)]
}

pub fn render_tsv(reports: &[OverlapReport]) -> String {
    let mut out = HEADER.join("\t") + "\n";
    for r in reports {
        out += &(cells(r).join("\t") + "\n");
    }
    out
}

pub fn render_markdown(reports: &[OverlapReport]) -> String {
    let mut out = format!("| {} |\n|{}\n", HEADER.join(" | "), "---|".repeat(HEADER.len()));
    for r in reports {
        out += &format!("| {} |\n", cells(r).join(" | "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetTag, Letter};
    use proptest::prelude::*;

    fn mcq(id: &str, stem: &str, context: Option<&str>) -> MultipleChoiceQuestion {
        MultipleChoiceQuestion {
            id: id.into(),
            stem: stem.into(),
            context: context.map(String::from),
            options: [(Letter::new('A').unwrap(), "x".to_string()), (Letter::new('B').unwrap(), "y".to_string())].into(),
            gold: Letter::new('A').unwrap(),
            dataset: DatasetTag::new("t"),
        }
    }

    /// Deterministic pseudo-random text over a small alphabet.
    fn text(seed: u64, len: usize) -> String {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..len)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (b'a' + ((x >> 33) % 20) as u8) as char
            })
            .collect()
    }

    fn naive(query: &str, docs: &[Document], min_len: usize) -> bool {
        let q: Vec<char> = query.chars().collect();
        if q.is_empty() {
            return false;
        }
        docs.iter().any(|d| {
            let dc: Vec<char> = d.text.chars().collect();
            let contains = |needle: &[char]| dc.windows(needle.len()).any(|w| w == needle);
            contains(&q) || (q.len() >= min_len && q.windows(min_len).any(contains))
        })
    }

    fn build(docs: &[Document]) -> CorpusIndex {
        build_corpus_index(docs.to_vec(), IndexConfig::default()).unwrap()
    }

    #[test]
    fn entire_short_question() {
        let stem = text(1, 100);
        let docs = vec![Document::new("d", format!("{}{stem}{}", text(2, 300), text(3, 300)))];
        let v = question_overlaps(&mcq("q", &stem, None), &build(&docs), 512);
        assert_eq!((v.overlapping, v.rule, v.matched_length), (true, Some(MatchRule::Entire), Some(100)));
    }

    #[test]
    fn spliced_window() {
        let shared = text(4, 512);
        let stem = format!("{}{shared}{}", text(5, 40), text(6, 48));
        let docs = vec![Document::new("d", format!("{}{shared}{}", text(7, 200), text(8, 200)))];
        let idx = build(&docs);
        let v = question_overlaps(&mcq("q", &stem, None), &idx, 512);
        assert!(v.overlapping && naive(&stem, &docs, 512));
        assert_eq!(v.rule, Some(MatchRule::Window));
        assert!(v.matched_length.unwrap() >= 512);
    }

    #[test]
    fn threshold_sensitivity() {
        let shared = text(9, 300);
        let stem = format!("{}{shared}{}", text(10, 150), text(11, 150));
        let docs = vec![Document::new("d", format!("{}{shared}{}", text(12, 500), text(13, 500)))];
        let idx = build(&docs);
        let q = mcq("q", &stem, None);
        assert!(!question_overlaps(&q, &idx, 512).overlapping);
        assert!(!naive(&stem, &docs, 512));
        assert!(question_overlaps(&q, &idx, 120).overlapping);
        assert!(naive(&stem, &docs, 120));
    }

    #[test]
    fn context_is_optional_in_query() {
        let ctx = text(14, 700);
        let docs = vec![Document::new("abstract", ctx.clone())];
        let idx = build(&docs);
        let q = mcq("q", "Does it work?", Some(&ctx));
        assert!(question_overlaps(&q, &idx, 512).overlapping);
        let opts = QueryOptions { include_context: false, ..Default::default() };
        assert!(!question_overlaps_with(&q, &idx, &opts).overlapping);
    }

    #[test]
    fn whitespace_collapse_is_opt_in() {
        let docs = vec![Document::new("d", "alpha beta  gamma delta")];
        let raw = build(&docs);
        let collapsed = build_corpus_index(docs, IndexConfig { normalization: Normalization::CollapseWhitespace, ..Default::default() }).unwrap();
        let q = mcq("q", "beta gamma", None);
        assert!(!question_overlaps(&q, &raw, 512).overlapping);
        assert!(question_overlaps(&q, &collapsed, 512).overlapping);
    }

    fn report_for(with: (usize, usize), without: (usize, usize)) -> OverlapReport {
        let mut verdicts = Vec::new();
        let mut correct = BTreeMap::new();
        for (flag, (right, n)) in [(true, with), (false, without)] {
            for i in 0..n {
                let id = format!("{flag}{i}");
                correct.insert(id.clone(), i < right);
                verdicts.push(OverlapVerdict { overlapping: flag, ..OverlapVerdict::clean(&id) });
            }
        }
        overlap_report("t", &verdicts, &correct, 512, &BootstrapConfig { iterations: 300, ..Default::default() }).unwrap()
    }

    #[test]
    fn fraction_label() {
        let r = report_for((11, 12), (1075, 1261));
        assert_eq!(r.fraction_label(), "12/1273 (0.9%)");
    }

    #[test]
    fn report_delta_sign() {
        let r = report_for((670, 893), (2318, 3290));
        assert_eq!(format!("{:.1}", 100.0 * r.delta.unwrap().value), "-4.6");
        assert!(render_tsv(&[r]).contains("\t-4.6 ["));
    }

    #[test]
    fn all_overlapping_leaves_without_undefined() {
        let r = report_for((3, 5), (0, 0));
        assert!(r.without_overlap.is_none() && r.delta.is_none());
        assert!(r.with_overlap.is_some());
    }

    #[test]
    fn report_rejects_missing_ids() {
        let v = vec![OverlapVerdict::clean("x")];
        let err = overlap_report("t", &v, &BTreeMap::new(), 512, &BootstrapConfig::default()).unwrap_err();
        assert!(matches!(err, OverlapError::MissingCorrectness(id) if id == "x"));
    }

    fn corpus_strategy() -> impl Strategy<Value = (Vec<Document>, Vec<String>)> {
        (any::<u64>(), 1usize..6, 1usize..12).prop_map(|(seed, ndocs, nq)| {
            let docs: Vec<Document> =
                (0..ndocs).map(|d| Document::new(format!("d{d}"), text(seed ^ d as u64, 200 + (seed as usize >> 3) % 900))).collect();
            let queries = (0..nq)
                .map(|i| {
                    let s = seed.wrapping_add(i as u64 * 7919);
                    let d = &docs[i % ndocs].text;
                    let take = 20 + (s as usize % 400).min(d.len() - 20);
                    let at = (s as usize >> 9) % (d.len() - take + 1);
                    format!("{}{}{}", text(s, (s >> 20) as usize % 200), &d[at..at + take], text(s ^ 1, (s >> 30) as usize % 200))
                })
                .collect();
            (docs, queries)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_naive_oracle((docs, queries) in corpus_strategy()) {
            let idx = build(&docs);
            for q in &queries {
                for l in [512, 120, 64, 30] {
                    prop_assert_eq!(text_overlaps("q", q, &idx, l).overlapping, naive(q, &docs, l), "L={}", l);
                }
            }
        }

        #[test]
        fn monotone_in_threshold_and_corpus((docs, queries) in corpus_strategy()) {
            let full = build(&docs);
            let partial = build(&docs[..1]);
            for q in &queries {
                let at = |idx: &CorpusIndex, l| text_overlaps("q", q, idx, l).overlapping;
                prop_assert!(!at(&full, 512) || at(&full, 120));
                prop_assert!(!at(&partial, 120) || at(&full, 120));
            }
        }
    }
}
