//! JSONL checkpoint of finished questions.
//!
//! Line 1 is a [`CheckpointHeader`]; every further line is one
//! [`QuestionRecord`]. A run only resumes from a checkpoint whose header
//! matches its dataset, strategy spec and question set. A torn final line
//! left by a crash is dropped on open.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BenchmarkError, QuestionRecord};
use crate::dataset::{DatasetTag, MultipleChoiceQuestion};
use crate::digest::sha256_hex;
use crate::prompting::PromptSpec;

pub const CHECKPOINT_FORMAT: &str = "medeval-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub dataset: DatasetTag,
    pub spec_sha256: String,
    pub questions_sha256: String,
}

impl CheckpointHeader {
    pub fn new(dataset: &DatasetTag, spec: &PromptSpec, questions: &[MultipleChoiceQuestion]) -> Self {
        let mut ids: Vec<&str> = questions.iter().map(|q| q.id.as_str()).collect();
        ids.sort_unstable();
        let questions: Vec<&MultipleChoiceQuestion> =
            ids.iter().filter_map(|id| questions.iter().find(|q| q.id == *id)).collect();
        CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            dataset: dataset.clone(),
            spec_sha256: sha256_hex(serde_json::to_vec(spec).expect("spec serializes")),
            questions_sha256: sha256_hex(serde_json::to_vec(&questions).expect("questions serialize")),
        }
    }
}

#[derive(Debug)]
pub struct Checkpoint {
    path: PathBuf,
    file: File,
    records: Vec<QuestionRecord>,
}

impl Checkpoint {
    /// Opens `path`, creating it with `header` if it does not exist.
    pub fn open(path: &Path, header: &CheckpointHeader) -> Result<Self, BenchmarkError> {
        let err = |message: String| BenchmarkError::Checkpoint { path: path.to_owned(), message };
        let mut records = Vec::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(|e| err(e.to_string()))?);
            let mut lines = reader.split(b'\n').peekable();
            let first = lines.next().transpose().map_err(|e| err(e.to_string()))?.unwrap_or_default();
            let found: CheckpointHeader =
                serde_json::from_slice(&first).map_err(|e| err(format!("unreadable header: {e}")))?;
            if &found != header {
                return Err(err("written by a different dataset, spec or question set".into()));
            }
            valid_len += first.len() as u64 + 1;
            while let Some(line) = lines.next() {
                let line = line.map_err(|e| err(e.to_string()))?;
                match serde_json::from_slice::<QuestionRecord>(&line) {
                    Ok(r) => {
                        records.push(r);
                        valid_len += line.len() as u64 + 1;
                    }
                    Err(_) if lines.peek().is_none() => {
                        log::warn!("{}: dropping torn final line", path.display());
                    }
                    Err(e) => return Err(err(format!("record {}: {e}", records.len() + 1))),
                }
            }
            let file = OpenOptions::new().write(true).open(path).map_err(|e| err(e.to_string()))?;
            file.set_len(valid_len).map_err(|e| err(e.to_string()))?;
        } else {
            let mut file = File::create(path).map_err(|e| err(e.to_string()))?;
            writeln!(file, "{}", serde_json::to_string(header).expect("header serializes")).map_err(|e| err(e.to_string()))?;
        }
        let file = OpenOptions::new().append(true).open(path).map_err(|e| err(e.to_string()))?;
        Ok(Checkpoint { path: path.to_owned(), file, records })
    }

    pub fn records(&self) -> &[QuestionRecord] {
        &self.records
    }

    pub fn append(&mut self, records: &[QuestionRecord]) -> Result<(), BenchmarkError> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).expect("record serializes");
            buf.push(b'\n');
        }
        self.file
            .write_all(&buf)
            .and_then(|_| self.file.sync_data())
            .map_err(|e| BenchmarkError::Checkpoint { path: self.path.clone(), message: e.to_string() })?;
        self.records.extend_from_slice(records);
        Ok(())
    }
}
