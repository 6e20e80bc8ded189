//! Benchmark items, answers and line-delimited dataset ingestion.
//!
//! Multiple-choice files hold one JSON object per line:
//!
//! ```text
//! {"id": "q1", "stem": "...", "context": "...", "options": {"A": "...", "B": "..."}, "gold": "B"}
//! ```
//!
//! `context` is optional (PubMedQA abstracts). Blank lines are skipped. The
//! full schema is documented in `docs/dataset-schema.md`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Version written into [`DatasetManifest::format_version`].
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: record {id:?}: {message}")]
    Validation {
        path: PathBuf,
        line: usize,
        id: String,
        message: String,
    },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId { path: PathBuf, line: usize, id: String },
}

/// An option letter such as `A`. Always an ASCII uppercase character.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Letter(char);

impl Letter {
    pub fn new(c: char) -> Option<Letter> {
        c.is_ascii_uppercase().then_some(Letter(c))
    }

    pub fn as_char(self) -> char {
        self.0
    }

    /// Letters `A` through the `n`th letter.
    pub fn first_n(n: usize) -> Vec<Letter> {
        (b'A'..=b'Z').take(n).map(|b| Letter(b as char)).collect()
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for Letter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Letter::new(c).ok_or_else(|| format!("invalid option letter {s:?}")),
            _ => Err(format!("invalid option letter {s:?}")),
        }
    }
}

impl Serialize for Letter {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut buf = [0u8; 4];
        serializer.serialize_str(self.0.encode_utf8(&mut buf))
    }
}

impl<'de> Deserialize<'de> for Letter {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Name of a benchmark dataset, e.g. `medqa` or `mmlu_anatomy`.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetTag(pub String);

impl DatasetTag {
    pub fn new(tag: impl Into<String>) -> Self {
        DatasetTag(tag.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type OptionMap = BTreeMap<Letter, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultipleChoiceQuestion {
    pub id: String,
    pub stem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(deserialize_with = "unique_options")]
    pub options: OptionMap,
    pub gold: Letter,
    #[serde(skip)]
    pub dataset: DatasetTag,
}

impl MultipleChoiceQuestion {
    pub fn letters(&self) -> Vec<Letter> {
        self.options.keys().copied().collect()
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.options.is_empty() {
            return Err("no options".into());
        }
        if !self.options.contains_key(&self.gold) {
            return Err(format!(
                "gold {} is not one of the options {}",
                self.gold,
                self.options.keys().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
            ));
        }
        Ok(())
    }
}

fn unique_options<'de, D: Deserializer<'de>>(deserializer: D) -> Result<OptionMap, D::Error> {
    struct OptionsVisitor;

    impl<'de> Visitor<'de> for OptionsVisitor {
        type Value = OptionMap;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("an object mapping option letters to option text")
        }

        fn visit_map<M: MapAccess<'de>>(self, mut map: M) -> Result<OptionMap, M::Error> {
            let mut out = OptionMap::new();
            while let Some((letter, text)) = map.next_entry::<Letter, String>()? {
                if out.insert(letter, text).is_some() {
                    return Err(de::Error::custom(format!("duplicate option letter {letter}")));
                }
            }
            Ok(out)
        }
    }

    deserializer.deserialize_map(OptionsVisitor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LongFormSource {
    HealthSearchQA,
    LiveQA,
    MedicationQA,
    AdversarialGeneral,
    AdversarialHealthEquity,
}

impl LongFormSource {
    pub const ALL: [LongFormSource; 5] = [
        LongFormSource::HealthSearchQA,
        LongFormSource::LiveQA,
        LongFormSource::MedicationQA,
        LongFormSource::AdversarialGeneral,
        LongFormSource::AdversarialHealthEquity,
    ];

    pub fn is_adversarial(self) -> bool {
        matches!(
            self,
            LongFormSource::AdversarialGeneral | LongFormSource::AdversarialHealthEquity
        )
    }
}

impl std::str::FromStr for LongFormSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        LongFormSource::ALL
            .into_iter()
            .find(|src| format!("{src:?}").eq_ignore_ascii_case(&norm))
            .ok_or_else(|| format!("unknown long-form source {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongFormQuestion {
    pub id: String,
    pub text: String,
    pub source: LongFormSource,
}

#[derive(Deserialize)]
struct LongFormRecord {
    id: String,
    text: String,
    #[serde(default)]
    source: Option<LongFormSource>,
}

/// Who produced an answer: a model arm name or `physician`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Producer(pub String);

impl Producer {
    pub fn new(name: impl Into<String>) -> Self {
        Producer(name.into())
    }

    pub fn physician() -> Self {
        Producer("physician".into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Producer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A long-form answer. `length_chars` counts Unicode scalar values and is
/// recomputed on deserialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "AnswerRecord")]
pub struct Answer {
    pub question_id: String,
    pub text: String,
    pub producer: Producer,
    pub length_chars: usize,
}

#[derive(Deserialize)]
struct AnswerRecord {
    question_id: String,
    text: String,
    producer: Producer,
}

impl From<AnswerRecord> for Answer {
    fn from(r: AnswerRecord) -> Self {
        Answer::new(r.question_id, r.text, r.producer)
    }
}

impl Answer {
    pub fn new(question_id: impl Into<String>, text: impl Into<String>, producer: Producer) -> Self {
        let text = text.into();
        Answer {
            question_id: question_id.into(),
            length_chars: text.chars().count(),
            text,
            producer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub format_version: u32,
    pub item_count: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub manifest: DatasetManifest,
    pub items: Vec<T>,
}

impl<T> Dataset<T> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn open(path: &Path) -> Result<BufReader<File>, DatasetError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| DatasetError::Io { path: path.to_owned(), source })
}

/// Iterates non-blank lines with their 1-based line numbers.
fn records(path: &Path) -> Result<Vec<(usize, String)>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io { path: path.to_owned(), source })?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn load_mcq_dataset(path: &Path, tag: &DatasetTag) -> Result<Dataset<MultipleChoiceQuestion>, DatasetError> {
    load_mcq_dataset_split(path, tag, Split::Test)
}

pub fn load_mcq_dataset_split(
    path: &Path,
    tag: &DatasetTag,
    split: Split,
) -> Result<Dataset<MultipleChoiceQuestion>, DatasetError> {
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for (line, text) in records(path)? {
        let mut q: MultipleChoiceQuestion =
            serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
                path: path.to_owned(),
                line,
                message: e.to_string(),
            })?;
        q.dataset = tag.clone();
        q.validate().map_err(|message| DatasetError::Validation {
            path: path.to_owned(),
            line,
            id: q.id.clone(),
            message,
        })?;
        if !seen.insert(q.id.clone()) {
            return Err(DatasetError::DuplicateId { path: path.to_owned(), line, id: q.id });
        }
        items.push(q);
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            name: tag.0.clone(),
            format_version: FORMAT_VERSION,
            item_count: items.len(),
            split,
        },
        items,
    })
}

/// Loads a long-form question file. Records may omit `source`; when present
/// it must equal `source`.
pub fn load_longform_dataset(
    path: &Path,
    source: LongFormSource,
) -> Result<Dataset<LongFormQuestion>, DatasetError> {
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for (line, text) in records(path)? {
        let rec: LongFormRecord = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
            path: path.to_owned(),
            line,
            message: e.to_string(),
        })?;
        let invalid = |message: String| DatasetError::Validation {
            path: path.to_owned(),
            line,
            id: rec.id.clone(),
            message,
        };
        if rec.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        if rec.text.trim().is_empty() {
            return Err(invalid("empty question text".into()));
        }
        if let Some(s) = rec.source {
            if s != source {
                return Err(invalid(format!("source {s:?} does not match {source:?}")));
            }
        }
        if !seen.insert(rec.id.clone()) {
            return Err(DatasetError::DuplicateId { path: path.to_owned(), line, id: rec.id });
        }
        items.push(LongFormQuestion { id: rec.id, text: rec.text, source });
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            name: format!("{source:?}"),
            format_version: FORMAT_VERSION,
            item_count: items.len(),
            split: Split::Test,
        },
        items,
    })
}

/// Loads answers, one `{question_id, text, producer}` object per line.
pub fn load_answers(path: &Path) -> Result<Vec<Answer>, DatasetError> {
    records(path)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
                path: path.to_owned(),
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes questions in the same line-delimited format the loader reads.
pub fn write_mcq_records<W: Write>(mut out: W, questions: &[MultipleChoiceQuestion]) -> std::io::Result<()> {
    for q in questions {
        serde_json::to_writer(&mut out, q)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
