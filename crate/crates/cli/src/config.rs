//! TOML configuration file. Values here sit below `MEDEVAL_*` environment
//! variables and command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    #[serde(default)]
    pub overlap: OverlapSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
    #[serde(default)]
    pub study: StudySection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<String>,
    pub mock_script: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_attempts: Option<u32>,
    pub rate_per_second: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub dataset: Option<PathBuf>,
    pub tag: Option<String>,
    pub strategy: Option<String>,
    pub out: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub iterations: Option<usize>,
    pub level: Option<f64>,
    pub sc_samples: Option<usize>,
    pub er_stage1: Option<usize>,
    pub er_stage2: Option<usize>,
    pub stage1_temperature: Option<f64>,
    pub stage2_temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub exemplars: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapSection {
    pub corpus: Option<PathBuf>,
    pub min_len: Option<Vec<usize>>,
    pub gram: Option<usize>,
    pub max_doc_chars: Option<usize>,
    pub include_context: Option<bool>,
    pub collapse_whitespace: Option<bool>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    pub iterations: Option<usize>,
    pub level: Option<f64>,
    pub single_rating: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub store: Option<PathBuf>,
    pub tokens: Option<PathBuf>,
    pub addr: Option<String>,
    pub compact_every: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

/// Flag (or its environment variable), then file, then default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Like [`pick`] for values without a default.
pub fn require<T>(flag: Option<T>, file: Option<T>, what: &str) -> anyhow::Result<T> {
    flag.or(file).ok_or_else(|| anyhow::Error::new(crate::Usage(format!("missing {what}"))))
}
