//! Run manifests: the resolved configuration, its digest, seeds, tool and
//! format versions, and digests of every input and output file. Manifests
//! carry no timestamps, so identical runs produce identical manifests.

use std::path::{Path, PathBuf};

use anyhow::Context;
use medeval::digest::sha256_hex;
use serde::Serialize;

pub const MANIFEST_FORMAT: &str = "medeval-manifest/1";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) })
    }
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub medeval: &'static str,
    pub dataset_format: u32,
    pub checkpoint_format: &'static str,
    pub ratings_format: &'static str,
    pub study_log_format: &'static str,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            medeval: env!("CARGO_PKG_VERSION"),
            dataset_format: medeval::dataset::FORMAT_VERSION,
            checkpoint_format: medeval::benchmark::CHECKPOINT_FORMAT,
            ratings_format: medeval::stats::RATINGS_FORMAT,
            study_log_format: medeval::study::LOG_FORMAT,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<C: Serialize> {
    pub format: &'static str,
    pub command: &'static str,
    pub versions: Versions,
    pub config_sha256: String,
    pub config: C,
    pub seeds: Vec<(String, u64)>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl<C: Serialize> Manifest<C> {
    pub fn new(command: &'static str, config: C) -> Self {
        let config_sha256 = sha256_hex(serde_json::to_vec(&config).expect("config serializes"));
        Manifest {
            format: MANIFEST_FORMAT,
            command,
            versions: Versions::default(),
            config_sha256,
            config,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.push((name.into(), value));
        self
    }

    pub fn input(mut self, path: &Path) -> anyhow::Result<Self> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    pub fn inputs<'a>(mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> anyhow::Result<Self> {
        for p in paths {
            self = self.input(p)?;
        }
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> anyhow::Result<Self> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}

/// `report.tsv` becomes `report.tsv.manifest.json`.
pub fn beside(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
