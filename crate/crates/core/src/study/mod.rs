//! Blinded rating studies.
//!
//! A study pairs a set of items (a question with one answer per arm) with a
//! rater pool. [`create_study`] expands it into rating tasks: in an
//! independent study every answer is rated by `raters_per_item` distinct
//! raters; in a pairwise study every item's two answers are compared side by
//! side, in a randomized order, by `raters_per_item` distinct raters. Raters
//! never see their own answers.
//!
//! Raters only ever receive a [`TaskPayload`], which carries the question,
//! the answer texts and the axes, never the arm names. Export resolves the
//! presentation order back to arm labels and produces a
//! [`RatingsFile`](crate::stats::RatingsFile).

mod axes;
mod service;
mod store;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{sha256_hex, sha256_u64};
use crate::stats::{Design, Exclusion, RatingRecord, RatingsFile, RATINGS_FORMAT};

pub use axes::{axis_set, export_axes, rater_axes, FIRST, INDEPENDENT_AXIS_SET, PAIRWISE_AXIS_SET, SECOND, TIE};
pub use service::StudyService;
pub use store::{StudyStore, LOG_FORMAT};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StudyError {
    #[error("invalid study: {0}")]
    Invalid(String),
    #[error("item {item:?}{}: only {eligible} eligible raters for {needed} ratings", arm.as_ref().map(|a| format!(" arm {a:?}")).unwrap_or_default())]
    Infeasible { item: String, arm: Option<String>, eligible: usize, needed: usize },
    #[error("unknown study {0:?}")]
    UnknownStudy(String),
    #[error("study {0:?} already exists")]
    StudyExists(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("task {task:?} is not assigned to rater {rater:?}")]
    WrongRater { task: String, rater: String },
    #[error("rating rejected: {0}")]
    Validation(String),
    #[error("task {0:?} already has a different rating")]
    Conflict(String),
    #[error("task {0:?} was marked unviewable")]
    Excluded(String),
    #[error("storage: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyItem {
    pub id: String,
    pub question: String,
    /// Answer text per arm.
    pub answers: BTreeMap<String, String>,
}

/// `rater_id` wrote the answer of `arm` to `item_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Authorship {
    pub item_id: String,
    pub arm: String,
    pub rater_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudySpec {
    pub id: String,
    pub design: Design,
    pub arms: Vec<String>,
    pub raters_per_item: usize,
    pub raters: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    pub items: Vec<StudyItem>,
    /// `None` means no authorship information: no exclusions are applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authorship: Option<Vec<Authorship>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingTask {
    pub task_id: String,
    pub item_id: String,
    pub rater_id: String,
    /// Arms in display order: one for independent tasks, two for pairwise.
    pub shown: Vec<String>,
    /// Position in the rater's queue.
    pub queue_key: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Completed,
    Unviewable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadAnswer {
    /// `1` or `2` in pairwise tasks, `1` otherwise.
    pub position: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadAxis {
    pub name: String,
    pub prompt: String,
    pub options: Vec<String>,
}

/// Everything a rater sees for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub task_id: String,
    pub design: Design,
    pub axis_set: String,
    pub question: String,
    pub answers: Vec<PayloadAnswer>,
    pub axes: Vec<PayloadAxis>,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub values: BTreeMap<String, String>,
}

impl RatingSubmission {
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_vec(&self.values).expect("values serialize"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub task_id: String,
    pub status: TaskStatus,
    /// Digest of the stored rating, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRating {
    pub task_id: String,
    pub rater_id: String,
    pub values: BTreeMap<String, String>,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredExclusion {
    pub task_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudySummary {
    pub tasks: usize,
    pub completed: usize,
    pub unviewable: usize,
    pub pending: usize,
}

/// A study and its ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    spec: StudySpec,
    tasks: Vec<RatingTask>,
    by_id: HashMap<String, usize>,
    ratings: BTreeMap<String, StoredRating>,
    excluded: BTreeMap<String, StoredExclusion>,
}

fn valid_id(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !s.starts_with('.')
}

fn validate_spec(spec: &StudySpec) -> Result<(), StudyError> {
    let bad = |m: String| Err(StudyError::Invalid(m));
    if !valid_id(&spec.id) {
        return bad(format!("study id {:?} must be non-empty and use only letters, digits, '-', '_' and '.'", spec.id));
    }
    if spec.raters_per_item == 0 {
        return bad("raters_per_item must be at least 1".into());
    }
    let arms: BTreeSet<&str> = spec.arms.iter().map(String::as_str).collect();
    if arms.len() != spec.arms.len() || arms.is_empty() {
        return bad("arms must be non-empty and distinct".into());
    }
    if spec.design == Design::Pairwise && spec.arms.len() != 2 {
        return bad(format!("a pairwise study compares exactly 2 arms, got {}", spec.arms.len()));
    }
    let raters: BTreeSet<&str> = spec.raters.iter().map(String::as_str).collect();
    if raters.len() != spec.raters.len() {
        return bad("rater ids must be distinct".into());
    }
    if spec.raters.len() < spec.raters_per_item {
        return bad(format!("pool of {} raters cannot supply {} raters per item", spec.raters.len(), spec.raters_per_item));
    }
    if spec.items.is_empty() {
        return bad("no items".into());
    }
    let mut ids = BTreeSet::new();
    for item in &spec.items {
        if !ids.insert(item.id.as_str()) {
            return bad(format!("duplicate item {:?}", item.id));
        }
        for arm in item.answers.keys() {
            if !arms.contains(arm.as_str()) {
                return bad(format!("item {:?}: unknown arm {arm:?}", item.id));
            }
        }
        for arm in &spec.arms {
            if !item.answers.contains_key(arm) {
                return bad(format!("item {:?}: no answer for arm {arm:?}", item.id));
            }
        }
    }
    for a in spec.authorship.iter().flatten() {
        if !ids.contains(a.item_id.as_str()) {
            return bad(format!("authorship names unknown item {:?}", a.item_id));
        }
        if !arms.contains(a.arm.as_str()) {
            return bad(format!("authorship names unknown arm {:?}", a.arm));
        }
    }
    Ok(())
}

fn unit_rng(spec: &StudySpec, item: &str, arm: Option<&str>) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sha256_u64(format!("{}\0{}\0{item}\0{}", spec.seed, spec.id, arm.unwrap_or(""))))
}

/// Expands `spec` into tasks. Deterministic in `spec.seed`.
pub fn create_study(spec: StudySpec) -> Result<Study, StudyError> {
    validate_spec(&spec)?;
    if spec.authorship.is_none() {
        log::warn!("study {}: no authorship registry supplied; raters may be assigned their own answers", spec.id);
    }
    let authors: BTreeSet<(&str, &str, &str)> = spec
        .authorship
        .iter()
        .flatten()
        .map(|a| (a.item_id.as_str(), a.arm.as_str(), a.rater_id.as_str()))
        .collect();
    let mut tasks = Vec::new();
    let mut units: Vec<(&StudyItem, Option<&str>)> = Vec::new();
    for item in &spec.items {
        match spec.design {
            Design::Independent => units.extend(spec.arms.iter().map(|a| (item, Some(a.as_str())))),
            Design::Pairwise => units.push((item, None)),
        }
    }
    for (item, arm) in units {
        let arms: Vec<&str> = match arm {
            Some(a) => vec![a],
            None => spec.arms.iter().map(String::as_str).collect(),
        };
        let eligible: Vec<&String> = spec
            .raters
            .iter()
            .filter(|r| !arms.iter().any(|a| authors.contains(&(item.id.as_str(), *a, r.as_str()))))
            .collect();
        if eligible.len() < spec.raters_per_item {
            return Err(StudyError::Infeasible {
                item: item.id.clone(),
                arm: arm.map(String::from),
                eligible: eligible.len(),
                needed: spec.raters_per_item,
            });
        }
        let mut rng = unit_rng(&spec, &item.id, arm);
        let mut chosen: Vec<usize> = sample(&mut rng, eligible.len(), spec.raters_per_item).into_iter().collect();
        chosen.sort_unstable();
        for r in chosen {
            let rater = eligible[r];
            let mut shown: Vec<String> = arms.iter().map(|a| a.to_string()).collect();
            if shown.len() == 2 && rng.random::<bool>() {
                shown.swap(0, 1);
            }
            let task_id = sha256_hex(format!("{}\0{}\0{}\0{}\0{rater}", spec.seed, spec.id, item.id, arm.unwrap_or("")))[..20].to_string();
            tasks.push(RatingTask { task_id, item_id: item.id.clone(), rater_id: rater.clone(), shown, queue_key: rng.random() });
        }
    }
    Study::from_parts(spec, tasks)
}

impl Study {
    fn from_parts(spec: StudySpec, tasks: Vec<RatingTask>) -> Result<Self, StudyError> {
        let mut by_id = HashMap::with_capacity(tasks.len());
        for (i, t) in tasks.iter().enumerate() {
            if by_id.insert(t.task_id.clone(), i).is_some() {
                return Err(StudyError::Invalid(format!("duplicate task id {}", t.task_id)));
            }
        }
        Ok(Study { spec, tasks, by_id, ratings: BTreeMap::new(), excluded: BTreeMap::new() })
    }

    pub fn spec(&self) -> &StudySpec {
        &self.spec
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn tasks(&self) -> &[RatingTask] {
        &self.tasks
    }

    pub fn task(&self, task_id: &str) -> Result<&RatingTask, StudyError> {
        self.by_id.get(task_id).map(|&i| &self.tasks[i]).ok_or_else(|| StudyError::UnknownTask(task_id.to_string()))
    }

    pub fn ratings(&self) -> impl Iterator<Item = &StoredRating> {
        self.ratings.values()
    }

    pub fn status(&self, task_id: &str) -> TaskStatus {
        if self.excluded.contains_key(task_id) {
            TaskStatus::Unviewable
        } else if self.ratings.contains_key(task_id) {
            TaskStatus::Completed
        } else {
            TaskStatus::Pending
        }
    }

    pub fn summary(&self) -> StudySummary {
        let unviewable = self.excluded.len();
        let completed = self.ratings.keys().filter(|t| !self.excluded.contains_key(*t)).count();
        StudySummary { tasks: self.tasks.len(), completed, unviewable, pending: self.tasks.len() - completed - unviewable }
    }

    fn item(&self, id: &str) -> &StudyItem {
        self.spec.items.iter().find(|i| i.id == id).expect("tasks reference existing items")
    }

    /// The blinded view of one task.
    pub fn payload(&self, task: &RatingTask) -> TaskPayload {
        let item = self.item(&task.item_id);
        let remaining = self.pending_for(&task.rater_id).count();
        TaskPayload {
            task_id: task.task_id.clone(),
            design: self.spec.design,
            axis_set: axis_set(self.spec.design).into(),
            question: item.question.clone(),
            answers: task.shown.iter().enumerate().map(|(i, arm)| PayloadAnswer { position: i + 1, text: item.answers[arm].clone() }).collect(),
            axes: rater_axes(self.spec.design)
                .into_iter()
                .map(|a| PayloadAxis { name: a.name, prompt: a.prompt, options: a.values })
                .collect(),
            remaining,
        }
    }

    fn pending_for<'a>(&'a self, rater: &'a str) -> impl Iterator<Item = &'a RatingTask> + 'a {
        self.tasks.iter().filter(move |t| t.rater_id == rater && self.status(&t.task_id) == TaskStatus::Pending)
    }

    /// The rater's next pending task in their randomized queue order.
    pub fn next_task(&self, rater: &str) -> Option<TaskPayload> {
        self.pending_for(rater).min_by_key(|t| (t.queue_key, t.task_id.as_str())).map(|t| self.payload(t))
    }

    fn validate_submission(&self, values: &BTreeMap<String, String>) -> Result<(), StudyError> {
        let axes = rater_axes(self.spec.design);
        let missing: Vec<&str> = axes.iter().filter(|a| !values.contains_key(&a.name)).map(|a| a.name.as_str()).collect();
        if !missing.is_empty() {
            return Err(StudyError::Validation(format!("missing axes: {}", missing.join(", "))));
        }
        for (k, v) in values {
            let axis = axes.iter().find(|a| &a.name == k).ok_or_else(|| StudyError::Validation(format!("unknown axis {k:?}")))?;
            if !axis.values.contains(v) {
                return Err(StudyError::Validation(format!("axis {k:?}: {v:?} is not one of {}", axis.values.join(", "))));
            }
        }
        Ok(())
    }

    /// Checks a submission; `Ok(None)` means it repeats the stored rating.
    pub fn check_rating(&self, task_id: &str, rater: &str, submission: &RatingSubmission) -> Result<Option<StoredRating>, StudyError> {
        let task = self.task(task_id)?;
        if task.rater_id != rater {
            return Err(StudyError::WrongRater { task: task_id.into(), rater: rater.into() });
        }
        if self.excluded.contains_key(task_id) {
            return Err(StudyError::Excluded(task_id.into()));
        }
        self.validate_submission(&submission.values)?;
        let digest = submission.digest();
        match self.ratings.get(task_id) {
            Some(existing) if existing.digest == digest => Ok(None),
            Some(_) => Err(StudyError::Conflict(task_id.into())),
            None => Ok(Some(StoredRating { task_id: task_id.into(), rater_id: rater.into(), values: submission.values.clone(), digest })),
        }
    }

    pub(crate) fn apply_rating(&mut self, rating: StoredRating) {
        self.ratings.insert(rating.task_id.clone(), rating);
    }

    pub(crate) fn apply_exclusion(&mut self, exclusion: StoredExclusion) {
        self.excluded.entry(exclusion.task_id.clone()).or_insert(exclusion);
    }

    pub fn ack(&self, task_id: &str) -> Ack {
        Ack { task_id: task_id.into(), status: self.status(task_id), digest: self.ratings.get(task_id).map(|r| r.digest.clone()) }
    }

    /// Records a rating in memory. [`StudyService`] adds persistence.
    pub fn record_rating(&mut self, task_id: &str, rater: &str, submission: &RatingSubmission) -> Result<Ack, StudyError> {
        if let Some(r) = self.check_rating(task_id, rater, submission)? {
            self.apply_rating(r);
        }
        Ok(self.ack(task_id))
    }

    /// Checks an unviewable report; `Ok(None)` means the task is already excluded.
    pub fn check_unviewable(&self, task_id: &str, rater: &str, reason: &str) -> Result<Option<StoredExclusion>, StudyError> {
        let task = self.task(task_id)?;
        if task.rater_id != rater {
            return Err(StudyError::WrongRater { task: task_id.into(), rater: rater.into() });
        }
        Ok((!self.excluded.contains_key(task_id)).then(|| StoredExclusion { task_id: task_id.into(), reason: reason.into() }))
    }

    pub fn mark_unviewable(&mut self, task_id: &str, rater: &str, reason: &str) -> Result<Ack, StudyError> {
        if let Some(e) = self.check_unviewable(task_id, rater, reason)? {
            self.apply_exclusion(e);
        }
        Ok(self.ack(task_id))
    }

    /// Completed, non-excluded ratings resolved to arm labels, sorted by
    /// item, arm and rater.
    pub fn export(&self) -> RatingsFile {
        let design = self.spec.design;
        let mut records: Vec<RatingRecord> = self
            .ratings
            .values()
            .filter(|r| !self.excluded.contains_key(&r.task_id))
            .map(|r| {
                let task = self.task(&r.task_id).expect("ratings reference tasks");
                let (arm, values) = match design {
                    Design::Independent => (Some(task.shown[0].clone()), r.values.clone()),
                    Design::Pairwise => {
                        let label = |arm: &str| if arm == self.spec.arms[0] { "A" } else { "B" };
                        let values = r
                            .values
                            .iter()
                            .map(|(k, v)| {
                                let v = match v.as_str() {
                                    FIRST => label(&task.shown[0]),
                                    SECOND => label(&task.shown[1]),
                                    _ => "tie",
                                };
                                (k.clone(), v.to_string())
                            })
                            .collect();
                        (None, values)
                    }
                };
                RatingRecord { task_id: r.task_id.clone(), item_id: task.item_id.clone(), rater_id: r.rater_id.clone(), arm, values }
            })
            .collect();
        records.sort_by(|a, b| (&a.item_id, &a.arm, &a.rater_id, &a.task_id).cmp(&(&b.item_id, &b.arm, &b.rater_id, &b.task_id)));
        let mut excluded: Vec<Exclusion> = self
            .excluded
            .values()
            .map(|e| Exclusion {
                task_id: e.task_id.clone(),
                item_id: self.task(&e.task_id).map(|t| t.item_id.clone()).unwrap_or_default(),
                reason: e.reason.clone(),
            })
            .collect();
        excluded.sort_by(|a, b| (&a.item_id, &a.task_id).cmp(&(&b.item_id, &b.task_id)));
        RatingsFile {
            format: RATINGS_FORMAT.into(),
            design,
            study_id: self.spec.id.clone(),
            arms: self.spec.arms.clone(),
            axes: export_axes(design),
            records,
            excluded,
        }
    }

    /// One row per exported rating: task, item, rater, arm (independent
    /// only), then one column per axis.
    pub fn export_csv(&self) -> String {
        let file = self.export();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["task_id".to_string(), "item_id".into(), "rater_id".into()];
        let independent = file.design == Design::Independent;
        if independent {
            header.push("arm".into());
        }
        header.extend(file.axes.iter().map(|a| a.name.clone()));
        w.write_record(&header).expect("in-memory write");
        for r in &file.records {
            let mut row = vec![r.task_id.clone(), r.item_id.clone(), r.rater_id.clone()];
            if independent {
                row.push(r.arm.clone().unwrap_or_default());
            }
            row.extend(file.axes.iter().map(|a| r.values[&a.name].clone()));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is UTF-8")
    }
}
