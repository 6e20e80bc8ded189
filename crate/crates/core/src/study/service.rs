//! Thread-safe front for a set of studies. Writes are serialized behind one
//! lock and reach the event log before they are applied in memory; reads
//! share the lock and always see a committed state.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use parking_lot::RwLock;

use super::store::Event;
use super::{create_study, Ack, RatingSubmission, Study, StudyError, StudySpec, StudySummary, TaskPayload};
use crate::stats::RatingsFile;

#[derive(Default)]
struct State {
    studies: BTreeMap<String, Study>,
    task_owner: HashMap<String, String>,
    writes: usize,
}

impl State {
    fn insert(&mut self, study: Study) {
        for t in study.tasks() {
            self.task_owner.insert(t.task_id.clone(), study.id().to_string());
        }
        self.studies.insert(study.id().to_string(), study);
    }

    fn study_of_task(&self, task_id: &str) -> Result<&str, StudyError> {
        self.task_owner.get(task_id).map(String::as_str).ok_or_else(|| StudyError::UnknownTask(task_id.into()))
    }
}

pub struct StudyService {
    state: RwLock<State>,
    store: Option<super::StudyStore>,
    compact_every: usize,
}

impl StudyService {
    pub fn in_memory() -> Self {
        StudyService { state: RwLock::new(State::default()), store: None, compact_every: 0 }
    }

    /// Opens (creating if needed) a store directory and loads every study in it.
    pub fn open(dir: &Path) -> Result<Self, StudyError> {
        let store = super::StudyStore::open(dir)?;
        let mut state = State::default();
        for id in store.list()? {
            state.insert(store.load(&id)?);
        }
        Ok(StudyService { state: RwLock::new(state), store: Some(store), compact_every: 1000 })
    }

    /// Snapshot a study after this many logged writes; 0 disables compaction.
    pub fn with_compaction(mut self, every: usize) -> Self {
        self.compact_every = every;
        self
    }

    pub fn study_ids(&self) -> Vec<String> {
        self.state.read().studies.keys().cloned().collect()
    }

    pub fn create(&self, spec: StudySpec) -> Result<StudySummary, StudyError> {
        let study = create_study(spec)?;
        let mut state = self.state.write();
        if state.studies.contains_key(study.id()) {
            return Err(StudyError::StudyExists(study.id().into()));
        }
        if let Some(store) = &self.store {
            store.create(&study)?;
        }
        let summary = study.summary();
        state.insert(study);
        Ok(summary)
    }

    pub fn with_study<T>(&self, id: &str, f: impl FnOnce(&Study) -> T) -> Result<T, StudyError> {
        let state = self.state.read();
        state.studies.get(id).map(f).ok_or_else(|| StudyError::UnknownStudy(id.into()))
    }

    pub fn summary(&self, id: &str) -> Result<StudySummary, StudyError> {
        self.with_study(id, Study::summary)
    }

    pub fn next_task(&self, study: &str, rater: &str) -> Result<Option<TaskPayload>, StudyError> {
        self.with_study(study, |s| s.next_task(rater))
    }

    pub fn export(&self, study: &str) -> Result<RatingsFile, StudyError> {
        self.with_study(study, Study::export)
    }

    pub fn export_csv(&self, study: &str) -> Result<String, StudyError> {
        self.with_study(study, Study::export_csv)
    }

    fn commit(&self, state: &mut State, study_id: &str, event: Event) -> Result<(), StudyError> {
        if let Some(store) = &self.store {
            store.append(study_id, &event)?;
        }
        let study = state.studies.get_mut(study_id).expect("owner map is consistent");
        match event {
            Event::Rating(r) => study.apply_rating(r),
            Event::Unviewable(e) => study.apply_exclusion(e),
            Event::Created { .. } => unreachable!("studies are created through create()"),
        }
        state.writes += 1;
        if let Some(store) = &self.store {
            if self.compact_every > 0 && state.writes % self.compact_every == 0 {
                store.compact(&state.studies[study_id])?;
            }
        }
        Ok(())
    }

    pub fn record_rating(&self, task_id: &str, rater: &str, submission: &RatingSubmission) -> Result<Ack, StudyError> {
        let mut state = self.state.write();
        let study_id = state.study_of_task(task_id)?.to_string();
        if let Some(rating) = state.studies[&study_id].check_rating(task_id, rater, submission)? {
            self.commit(&mut state, &study_id, Event::Rating(rating))?;
        }
        Ok(state.studies[&study_id].ack(task_id))
    }

    pub fn mark_unviewable(&self, task_id: &str, rater: &str, reason: &str) -> Result<Ack, StudyError> {
        let mut state = self.state.write();
        let study_id = state.study_of_task(task_id)?.to_string();
        if let Some(exclusion) = state.studies[&study_id].check_unviewable(task_id, rater, reason)? {
            self.commit(&mut state, &study_id, Event::Unviewable(exclusion))?;
        }
        Ok(state.studies[&study_id].ack(task_id))
    }
}
