//! Plain-text prompt templates and exemplar data files.
//!
//! Templates use `{NAME}` placeholders (`{QUESTION}`, `{OPTIONS}`,
//! `{REASONINGS}`, ...). Substitution is a single left-to-right pass, so
//! placeholder-like text inside substituted values is never expanded again.
//! Unknown placeholders are left in place.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Exemplar, PromptError};

pub const EXEMPLAR_COT: &str = "exemplar_cot";
pub const EXEMPLAR_FEWSHOT: &str = "exemplar_fewshot";
pub const TARGET_COT: &str = "target_cot";
pub const TARGET_FEWSHOT: &str = "target_fewshot";
pub const ER_STAGE2: &str = "er_stage2";
pub const ER_INSTRUCTION_SUFFIX: &str = "er_instruction_suffix";
pub const PUBMEDQA_SHOT: &str = "pubmedqa_shot";
pub const PUBMEDQA_TARGET: &str = "pubmedqa_target";

const BUILTIN_TEMPLATES: &[(&str, &str)] = &[
    (EXEMPLAR_COT, include_str!("../../assets/templates/exemplar_cot.txt")),
    (EXEMPLAR_FEWSHOT, include_str!("../../assets/templates/exemplar_fewshot.txt")),
    (TARGET_COT, include_str!("../../assets/templates/target_cot.txt")),
    (TARGET_FEWSHOT, include_str!("../../assets/templates/target_fewshot.txt")),
    (ER_STAGE2, include_str!("../../assets/templates/er_stage2.txt")),
    (ER_INSTRUCTION_SUFFIX, include_str!("../../assets/templates/er_instruction_suffix.txt")),
    (PUBMEDQA_SHOT, include_str!("../../assets/templates/pubmedqa_shot.txt")),
    (PUBMEDQA_TARGET, include_str!("../../assets/templates/pubmedqa_target.txt")),
    ("longform_healthsearchqa", include_str!("../../assets/templates/longform_healthsearchqa.txt")),
    ("longform_liveqa", include_str!("../../assets/templates/longform_liveqa.txt")),
    ("longform_medicationqa", include_str!("../../assets/templates/longform_medicationqa.txt")),
    ("longform_adversarial", include_str!("../../assets/templates/longform_adversarial.txt")),
];

const BUILTIN_EXEMPLARS: &[(&str, &str)] = &[
    ("medqa_cot", include_str!("../../assets/prompts/medqa_cot.json")),
    ("medmcqa_cot", include_str!("../../assets/prompts/medmcqa_cot.json")),
    ("pubmedqa_cot", include_str!("../../assets/prompts/pubmedqa_cot.json")),
    ("mmlu_cot", include_str!("../../assets/prompts/mmlu_cot.json")),
    ("pubmedqa_fewshot", include_str!("../../assets/prompts/pubmedqa_fewshot.json")),
];

/// Replaces every `{KEY}` whose key is listed in `values`.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let key_len = after.bytes().take_while(|b| b.is_ascii_uppercase() || *b == b'_' || b.is_ascii_digit()).count();
        let closed = after.as_bytes().get(key_len) == Some(&b'}');
        match values.iter().find(|(k, _)| closed && *k == &after[..key_len]) {
            Some((_, v)) => {
                out.push_str(v);
                rest = &after[key_len + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    entries: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Templates::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Templates {
            entries: BUILTIN_TEMPLATES.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// Built-in templates overridden by every `<name>.txt` in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut t = Templates::builtin();
        let entries = std::fs::read_dir(dir).map_err(|e| PromptError::Asset(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| PromptError::Asset(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let body = std::fs::read_to_string(&path).map_err(|e| PromptError::Asset(format!("{}: {e}", path.display())))?;
            t.entries.insert(name.to_string(), body.trim_end_matches('\n').to_string());
        }
        Ok(t)
    }

    pub fn get(&self, name: &str) -> Result<&str, PromptError> {
        self.entries
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| PromptError::Asset(format!("no template named {name:?}")))
    }

    pub fn set(&mut self, name: impl Into<String>, body: impl Into<String>) {
        self.entries.insert(name.into(), body.into());
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Instructions plus exemplars, as stored in the `assets/prompts` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub format: String,
    pub dataset: String,
    pub style: String,
    pub instructions: String,
    #[serde(default)]
    pub exemplars: Vec<Exemplar>,
    /// Exemplars drawn per question from a training pool instead of fixed ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
}

impl ExemplarSet {
    pub fn builtin(name: &str) -> Result<Self, PromptError> {
        let (_, body) = BUILTIN_EXEMPLARS
            .iter()
            .find(|(k, _)| *k == name)
            .ok_or_else(|| PromptError::Asset(format!("no built-in exemplar set {name:?}")))?;
        serde_json::from_str(body).map_err(|e| PromptError::Asset(format!("{name}: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        let body = std::fs::read_to_string(path).map_err(|e| PromptError::Asset(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&body).map_err(|e| PromptError::Asset(format!("{}: {e}", path.display())))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN_EXEMPLARS.iter().map(|(k, _)| *k)
    }
}
