//! Running a prompting strategy over a multiple-choice dataset.
//!
//! Questions are evaluated concurrently in chunks. After each chunk the
//! finished records are appended to an optional JSONL checkpoint, so an
//! interrupted run resumes where it stopped. A chunk in which every question
//! failed with a transport error means the backend is unreachable: the run
//! aborts, leaving the checkpoint intact. Questions that failed with a
//! transport error are never checkpointed, so a resumed run retries them.
//!
//! A question whose strategy fails (refusal, no parseable answer, exhausted
//! retries) is recorded with its error and counted as incorrect. Accuracy
//! over answered questions only is reported alongside.

mod checkpoint;
mod report;

use std::collections::BTreeSet;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Client};
use crate::dataset::{DatasetTag, Letter, MultipleChoiceQuestion};
use crate::prompting::{run_strategy, PromptError, PromptSpec, Strategy, StrategyOutcome};
use crate::stats::{bootstrap_mean, BootstrapConfig, StatsError};

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_FORMAT};
pub use report::{emit_report, ReportFormat};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("no questions to evaluate")]
    NoQuestions,
    #[error("duplicate question id {0:?}")]
    DuplicateQuestion(String),
    #[error("invalid prompt spec: {0}")]
    Spec(#[from] PromptError),
    #[error("backend unreachable after {completed} of {total} questions: {last_error}")]
    Unreachable { completed: usize, total: usize, last_error: String },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("report: {0}")]
    Report(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Letter>,
    pub gold: Letter,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<StrategyOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub dataset: DatasetTag,
    pub strategy: Strategy,
    pub backend: String,
    /// Sorted by question id.
    pub records: Vec<QuestionRecord>,
    pub total: usize,
    pub correct: usize,
    pub errored: usize,
    /// `correct / total`; errored questions count as incorrect.
    pub accuracy: f64,
    pub ci: (f64, f64),
    /// `correct / (total - errored)`, `None` when nothing was answered.
    pub answered_accuracy: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub parallelism: usize,
    pub bootstrap: BootstrapConfig,
    pub checkpoint: Option<PathBuf>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig { parallelism: 4, bootstrap: BootstrapConfig::default(), checkpoint: None }
    }
}

fn evaluate(q: &MultipleChoiceQuestion, client: &Client, spec: &PromptSpec) -> Result<QuestionRecord, BackendError> {
    let record = |predicted: Option<Letter>, error: Option<String>, outcome| QuestionRecord {
        id: q.id.clone(),
        predicted,
        gold: q.gold,
        correct: predicted == Some(q.gold),
        error,
        outcome,
    };
    match run_strategy(q, client, spec) {
        Ok(o) => Ok(record(Some(o.final_answer), None, Some(o))),
        Err(PromptError::Backend(e @ BackendError::Transport(_))) => Err(e),
        Err(e) => Ok(record(None, Some(e.to_string()), None)),
    }
}

pub fn run_benchmark(
    dataset: &DatasetTag,
    questions: &[MultipleChoiceQuestion],
    spec: &PromptSpec,
    client: &Client,
    cfg: &BenchmarkConfig,
) -> Result<BenchmarkResult, BenchmarkError> {
    if questions.is_empty() {
        return Err(BenchmarkError::NoQuestions);
    }
    let mut ids = BTreeSet::new();
    for q in questions {
        if !ids.insert(q.id.as_str()) {
            return Err(BenchmarkError::DuplicateQuestion(q.id.clone()));
        }
    }
    spec.validate()?;
    cfg.bootstrap.validate()?;

    let header = CheckpointHeader::new(dataset, spec, questions);
    let mut checkpoint = match &cfg.checkpoint {
        Some(path) => Some(Checkpoint::open(path, &header)?),
        None => None,
    };
    let mut records: Vec<QuestionRecord> = checkpoint.as_ref().map(|c| c.records().to_vec()).unwrap_or_default();
    let done: BTreeSet<String> = records.iter().map(|r| r.id.clone()).collect();
    let pending: Vec<&MultipleChoiceQuestion> = questions.iter().filter(|q| !done.contains(&q.id)).collect();
    if !done.is_empty() {
        log::info!("resuming: {} of {} questions already evaluated", done.len(), questions.len());
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.max(1))
        .thread_name(|i| format!("medeval-bench-{i}"))
        .build()
        .map_err(|e| BenchmarkError::Report(e.to_string()))?;
    // transport failures stay out of the checkpoint so a resumed run retries them
    let mut transient = Vec::new();
    for chunk in pending.chunks(cfg.parallelism.max(1) * 4) {
        let results: Vec<Result<QuestionRecord, BackendError>> =
            pool.install(|| chunk.par_iter().map(|q| evaluate(q, client, spec)).collect());
        if let Some(Err(last)) = results.iter().find(|r| r.is_err()).filter(|_| results.iter().all(Result::is_err)) {
            return Err(BenchmarkError::Unreachable {
                completed: records.len() + transient.len(),
                total: questions.len(),
                last_error: last.to_string(),
            });
        }
        let mut finished = Vec::new();
        for (r, q) in results.into_iter().zip(chunk) {
            match r {
                Ok(record) => finished.push(record),
                Err(e) => transient.push(QuestionRecord {
                    id: q.id.clone(),
                    predicted: None,
                    gold: q.gold,
                    correct: false,
                    error: Some(e.to_string()),
                    outcome: None,
                }),
            }
        }
        if let Some(c) = checkpoint.as_mut() {
            c.append(&finished)?;
        }
        records.extend(finished);
        log::debug!("{}/{} questions evaluated", records.len(), questions.len());
    }
    records.extend(transient);
    summarize(dataset, spec.strategy, client.backend_name(), records, &cfg.bootstrap)
}

/// Builds a result from finished records.
pub fn summarize(
    dataset: &DatasetTag,
    strategy: Strategy,
    backend: &str,
    mut records: Vec<QuestionRecord>,
    boot: &BootstrapConfig,
) -> Result<BenchmarkResult, BenchmarkError> {
    if records.is_empty() {
        return Err(BenchmarkError::NoQuestions);
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let correct = records.iter().filter(|r| r.correct).count();
    let errored = records.iter().filter(|r| r.error.is_some()).count();
    let total = records.len();
    let flags: Vec<f64> = records.iter().map(|r| f64::from(u8::from(r.correct))).collect();
    let summary = bootstrap_mean(&flags, boot)?;
    Ok(BenchmarkResult {
        dataset: dataset.clone(),
        strategy,
        backend: backend.to_string(),
        total,
        correct,
        errored,
        accuracy: correct as f64 / total as f64,
        ci: summary.ci,
        answered_accuracy: (total > errored).then(|| correct as f64 / (total - errored) as f64),
        iterations: boot.iterations,
        seed: boot.seed,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{MockBackend, MockReply, MockRule, MockScript};
    use std::sync::Arc;

    fn questions(n: usize) -> Vec<MultipleChoiceQuestion> {
        (0..n)
            .map(|i| MultipleChoiceQuestion {
                id: format!("q{i:04}"),
                stem: format!("Question number {i}?"),
                context: None,
                options: Letter::first_n(4).into_iter().map(|l| (l, format!("option {l}"))).collect(),
                gold: Letter::first_n(4)[i % 4],
                dataset: DatasetTag::new("medqa"),
            })
            .collect()
    }

    fn client(script: MockScript) -> Client {
        Client::new(Arc::new(MockBackend::new(script))).with_retry(crate::backends::RetryPolicy::none())
    }

    fn quick() -> BenchmarkConfig {
        BenchmarkConfig { parallelism: 2, bootstrap: BootstrapConfig { iterations: 200, ..Default::default() }, checkpoint: None }
    }

    /// Answers each question with its gold letter when `i % modulus != 0`.
    fn gold_script(qs: &[MultipleChoiceQuestion], wrong_every: usize) -> MockScript {
        qs.iter().enumerate().fold(MockScript::new(), |s, (i, q)| {
            let letter = if wrong_every > 0 && i % wrong_every == 0 {
                q.letters().into_iter().find(|&l| l != q.gold).unwrap()
            } else {
                q.gold
            };
            s.rule(MockRule::contains(format!("{}\n", q.stem), vec![MockReply::Text(format!("Answer: ({letter})"))]))
        })
    }

    fn spec() -> PromptSpec {
        PromptSpec::for_dataset("medqa", Strategy::FewShot).unwrap()
    }

    #[test]
    fn all_gold_and_all_wrong() {
        let qs = questions(12);
        let tag = DatasetTag::new("medqa");
        let r = run_benchmark(&tag, &qs, &spec(), &client(gold_script(&qs, 0)), &quick()).unwrap();
        assert_eq!((r.accuracy, r.ci), (1.0, (1.0, 1.0)));
        let r = run_benchmark(&tag, &qs, &spec(), &client(gold_script(&qs, 1)), &quick()).unwrap();
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn refusals_count_as_incorrect() {
        let qs = questions(8);
        let script = gold_script(&qs[..6], 0);
        let r = run_benchmark(&DatasetTag::new("medqa"), &qs, &spec(), &client(script), &quick()).unwrap();
        assert_eq!((r.correct, r.errored, r.total), (6, 2, 8));
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.answered_accuracy, Some(1.0));
        assert!(r.records.iter().filter(|x| x.error.is_some()).all(|x| !x.correct));
    }

    #[test]
    fn unreachable_backend_aborts() {
        let qs = questions(5);
        let script = MockScript::new().with_default(MockReply::Transport("connection refused".into()));
        let err = run_benchmark(&DatasetTag::new("medqa"), &qs, &spec(), &client(script), &quick()).unwrap_err();
        assert!(matches!(err, BenchmarkError::Unreachable { completed: 0, total: 5, .. }));
    }

    #[test]
    fn order_invariant() {
        let qs = questions(20);
        let script = gold_script(&qs, 3);
        let tag = DatasetTag::new("medqa");
        let a = run_benchmark(&tag, &qs, &spec(), &client(script.clone()), &quick()).unwrap();
        let mut rev = qs.clone();
        rev.reverse();
        let b = run_benchmark(&tag, &rev, &spec(), &client(script), &quick()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_empty_and_duplicates() {
        let tag = DatasetTag::new("medqa");
        let c = client(MockScript::new());
        assert!(matches!(run_benchmark(&tag, &[], &spec(), &c, &quick()), Err(BenchmarkError::NoQuestions)));
        let mut qs = questions(2);
        qs[1].id = qs[0].id.clone();
        assert!(matches!(run_benchmark(&tag, &qs, &spec(), &c, &quick()), Err(BenchmarkError::DuplicateQuestion(_))));
    }
}
