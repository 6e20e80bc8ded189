//! Scripted deterministic backend.
//!
//! Output is a pure function of the request: rules are tried in order and the
//! first match picks a reply. A rule with several replies indexes them by
//! `seed % len` when sampling (`temperature > 0`) and uses the first reply for
//! greedy requests. Script files are JSON:
//!
//! ```text
//! {
//!   "rules": [
//!     {"when": {"digest": "<sha256 of prompt>"}, "replies": [{"text": "Answer: (C)"}]},
//!     {"when": {"contains": "Students' reasonings"}, "replies": [{"text": "... Answer: (B)"}, "echo"]}
//!   ],
//!   "default": {"hashed_answer": "ABCD"}
//! }
//! ```

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenerationRequest};
use crate::digest::{sha256_hex, sha256_u64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleMatch {
    Digest(String),
    Contains(String),
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockReply {
    Text(String),
    /// Returns the prompt itself.
    Echo,
    /// `"Answer: (X)"` with X picked from these letters by hashing the request.
    HashedAnswer(String),
    Transport(String),
    Refusal(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub when: RuleMatch,
    pub replies: Vec<MockReply>,
}

impl MockRule {
    pub fn digest_of(prompt: &str, replies: Vec<MockReply>) -> Self {
        MockRule { when: RuleMatch::Digest(sha256_hex(prompt)), replies }
    }

    pub fn contains(needle: impl Into<String>, replies: Vec<MockReply>) -> Self {
        MockRule { when: RuleMatch::Contains(needle.into()), replies }
    }

    pub fn any(replies: Vec<MockReply>) -> Self {
        MockRule { when: RuleMatch::Any, replies }
    }

    fn matches(&self, prompt: &str, digest: &str) -> bool {
        match &self.when {
            RuleMatch::Digest(d) => d.eq_ignore_ascii_case(digest),
            RuleMatch::Contains(needle) => prompt.contains(needle.as_str()),
            RuleMatch::Any => true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default: Option<MockReply>,
}

impl MockScript {
    pub fn new() -> Self {
        MockScript::default()
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_default(mut self, reply: MockReply) -> Self {
        self.default = Some(reply);
        self
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid mock script {}: {e}", path.display()))
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    script: MockScript,
    max_latency: Duration,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend { script, max_latency: Duration::ZERO }
    }

    /// Always replies with `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        MockBackend::new(MockScript::new().with_default(MockReply::Text(text.into())))
    }

    /// Sleeps a request-derived duration below `max` before replying, so
    /// concurrent batches complete out of order.
    pub fn with_latency_jitter(mut self, max: Duration) -> Self {
        self.max_latency = max;
        self
    }

    fn request_hash(request: &GenerationRequest, digest: &str) -> u64 {
        sha256_u64(format!("{digest}|{:?}|{}", request.seed, request.temperature.to_bits()))
    }

    fn pick<'a>(replies: &'a [MockReply], request: &GenerationRequest) -> Option<&'a MockReply> {
        if replies.len() <= 1 || request.temperature == 0.0 {
            return replies.first();
        }
        let seed = request.seed.unwrap_or(0);
        replies.get((seed % replies.len() as u64) as usize)
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let digest = sha256_hex(&request.prompt);
        let hash = Self::request_hash(request, &digest);
        if !self.max_latency.is_zero() {
            let nanos = self.max_latency.as_nanos().max(1) as u64;
            std::thread::sleep(Duration::from_nanos(hash % nanos));
        }
        let reply = self
            .script
            .rules
            .iter()
            .find(|r| r.matches(&request.prompt, &digest))
            .and_then(|r| Self::pick(&r.replies, request))
            .or(self.script.default.as_ref())
            .ok_or_else(|| BackendError::Refused(format!("no scripted reply for prompt digest {digest}")))?;
        match reply {
            MockReply::Text(t) => Ok(t.clone()),
            MockReply::Echo => Ok(request.prompt.clone()),
            MockReply::HashedAnswer(letters) => {
                let letters: Vec<char> = letters.chars().collect();
                if letters.is_empty() {
                    return Err(BackendError::Refused("hashed_answer needs at least one letter".into()));
                }
                let pick = letters[(hash % letters.len() as u64) as usize];
                Ok(format!("Explanation: scripted reasoning.\nAnswer: ({pick})"))
            }
            MockReply::Transport(m) => Err(BackendError::Transport(m.clone())),
            MockReply::Refusal(m) => Err(BackendError::Refused(m.clone())),
        }
    }
}
