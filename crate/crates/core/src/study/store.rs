//! On-disk persistence: one append-only JSONL event log per study, plus an
//! optional snapshot that compaction writes.
//!
//! `{dir}/{study}.log.jsonl` holds one event per line: `created` (the spec
//! and its tasks), `rating` or `unviewable`. `{dir}/{study}.snapshot.json`
//! holds the full state at compaction time; its log then restarts empty.
//! Replaying an event twice has no effect, so a crash between writing a
//! snapshot and truncating the log loses nothing.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RatingTask, StoredExclusion, StoredRating, Study, StudyError, StudySpec};

pub const LOG_FORMAT: &str = "medeval-study-log/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created { format: String, spec: StudySpec, tasks: Vec<RatingTask> },
    Rating(StoredRating),
    Unviewable(StoredExclusion),
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    format: String,
    spec: StudySpec,
    tasks: Vec<RatingTask>,
    ratings: Vec<StoredRating>,
    excluded: Vec<StoredExclusion>,
}

#[derive(Debug, Clone)]
pub struct StudyStore {
    dir: PathBuf,
}

fn storage(path: &Path, e: impl std::fmt::Display) -> StudyError {
    StudyError::Storage(format!("{}: {e}", path.display()))
}

impl StudyStore {
    pub fn open(dir: &Path) -> Result<Self, StudyError> {
        fs::create_dir_all(dir).map_err(|e| storage(dir, e))?;
        Ok(StudyStore { dir: dir.to_owned() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.log.jsonl"))
    }

    fn snapshot_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.snapshot.json"))
    }

    pub fn exists(&self, id: &str) -> bool {
        self.log_path(id).exists() || self.snapshot_path(id).exists()
    }

    /// Ids of every stored study, sorted.
    pub fn list(&self) -> Result<Vec<String>, StudyError> {
        let mut ids: Vec<String> = fs::read_dir(&self.dir)
            .map_err(|e| storage(&self.dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_suffix(".log.jsonl").or_else(|| name.strip_suffix(".snapshot.json")).map(String::from)
            })
            .collect();
        ids.sort();
        ids.dedup();
        Ok(ids)
    }

    pub fn create(&self, study: &Study) -> Result<(), StudyError> {
        if self.exists(study.id()) {
            return Err(StudyError::StudyExists(study.id().into()));
        }
        self.append(
            study.id(),
            &Event::Created { format: LOG_FORMAT.into(), spec: study.spec().clone(), tasks: study.tasks().to_vec() },
        )
    }

    /// Appends one event and syncs it to disk.
    pub fn append(&self, id: &str, event: &Event) -> Result<(), StudyError> {
        let path = self.log_path(id);
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| storage(&path, e))?;
        f.write_all(&line).and_then(|_| f.sync_data()).map_err(|e| storage(&path, e))
    }

    pub fn load(&self, id: &str) -> Result<Study, StudyError> {
        let snap_path = self.snapshot_path(id);
        let mut study = if snap_path.exists() {
            let text = fs::read_to_string(&snap_path).map_err(|e| storage(&snap_path, e))?;
            let snap: Snapshot = serde_json::from_str(&text).map_err(|e| storage(&snap_path, e))?;
            if snap.format != LOG_FORMAT {
                return Err(storage(&snap_path, format!("unsupported format {:?}", snap.format)));
            }
            let mut s = Study::from_parts(snap.spec, snap.tasks)?;
            snap.ratings.into_iter().for_each(|r| s.apply_rating(r));
            snap.excluded.into_iter().for_each(|e| s.apply_exclusion(e));
            Some(s)
        } else {
            None
        };
        let log_path = self.log_path(id);
        if log_path.exists() {
            let reader = BufReader::new(File::open(&log_path).map_err(|e| storage(&log_path, e))?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| storage(&log_path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event = serde_json::from_str(&line).map_err(|e| storage(&log_path, format!("line {}: {e}", n + 1)))?;
                match (event, study.as_mut()) {
                    (Event::Created { format, spec, tasks }, None) => {
                        if format != LOG_FORMAT {
                            return Err(storage(&log_path, format!("unsupported format {format:?}")));
                        }
                        study = Some(Study::from_parts(spec, tasks)?);
                    }
                    (Event::Created { .. }, Some(_)) => {}
                    (Event::Rating(r), Some(s)) => s.apply_rating(r),
                    (Event::Unviewable(e), Some(s)) => s.apply_exclusion(e),
                    (_, None) => return Err(storage(&log_path, "event before study creation")),
                }
            }
        }
        study.ok_or_else(|| StudyError::UnknownStudy(id.into()))
    }

    /// Writes a snapshot of `study` and empties its log.
    pub fn compact(&self, study: &Study) -> Result<(), StudyError> {
        let snap = Snapshot {
            format: LOG_FORMAT.into(),
            spec: study.spec().clone(),
            tasks: study.tasks().to_vec(),
            ratings: study.ratings.values().cloned().collect(),
            excluded: study.excluded.values().cloned().collect(),
        };
        let path = self.snapshot_path(study.id());
        let tmp = path.with_extension("json.tmp");
        let write = || -> std::io::Result<()> {
            let mut f = File::create(&tmp)?;
            f.write_all(&serde_json::to_vec(&snap).expect("snapshot serializes"))?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| storage(&path, e))?;
        let log = self.log_path(study.id());
        File::create(&log).and_then(|f| f.sync_all()).map_err(|e| storage(&log, e))
    }
}
