//! Uniform interface to text-generation models.
//!
//! A [`Backend`] turns one [`GenerationRequest`] into raw text. [`Client`]
//! wraps a backend with the retry policy, an optional token-bucket rate
//! limiter and bounded fan-out for batches. Batch results always come back in
//! request order, and every [`Generation`] carries its `sample_index`, so
//! nothing downstream depends on completion order.

mod http;
mod mock;
mod retry;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, ENDPOINT_ENV, TOKEN_ENV};
pub use mock::{MockBackend, MockReply, MockRule, MockScript, RuleMatch};
pub use retry::{RetryPolicy, TokenBucket};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum BackendError {
    /// Connection failures, timeouts and server-side 5xx responses.
    #[error("transport error: {0}")]
    Transport(String),
    /// The backend rejected the request; retrying will not help.
    #[error("backend refused request: {0}")]
    Refused(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    /// 0 means greedy decoding.
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, temperature: f64, max_tokens: u32, seed: Option<u64>) -> Self {
        GenerationRequest { prompt: prompt.into(), temperature, max_tokens, seed }
    }

    pub fn greedy(prompt: impl Into<String>, max_tokens: u32) -> Self {
        GenerationRequest::new(prompt, 0.0, max_tokens, None)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be a finite non-negative number, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Which step of a prompting strategy produced a generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Single,
    ScSample,
    ErStage1,
    ErStage2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub request: GenerationRequest,
    pub stage: Stage,
    pub sample_index: usize,
}

/// Where a request sits within one strategy invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSlot {
    pub stage: Stage,
    pub sample_index: usize,
}

impl SampleSlot {
    pub fn new(stage: Stage, sample_index: usize) -> Self {
        SampleSlot { stage, sample_index }
    }
}

pub trait Backend: Send + Sync {
    /// Short name recorded in run manifests.
    fn name(&self) -> &str;

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

pub struct Client {
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    limiter: Option<TokenBucket>,
    pool: Option<rayon::ThreadPool>,
}

impl Client {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Client { backend, retry: RetryPolicy::default(), limiter: None, pool: None }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, limiter: TokenBucket) -> Self {
        self.limiter = Some(limiter);
        self
    }

    /// Caps how many requests of one batch are in flight at once.
    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .thread_name(|i| format!("medeval-gen-{i}"))
            .build()
            .ok();
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn generate(&self, request: &GenerationRequest, slot: SampleSlot) -> Result<Generation, BackendError> {
        request.validate()?;
        let text = self.retry.run(|| {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            self.backend.complete(request)
        })?;
        Ok(Generation {
            text,
            request: request.clone(),
            stage: slot.stage,
            sample_index: slot.sample_index,
        })
    }

    /// Runs every request; element `i` of the result belongs to request `i`.
    pub fn generate_batch(&self, requests: &[(GenerationRequest, SampleSlot)]) -> Vec<Result<Generation, BackendError>> {
        let run = || {
            requests
                .par_iter()
                .map(|(req, slot)| self.generate(req, *slot))
                .collect::<Vec<_>>()
        };
        match &self.pool {
            Some(pool) => pool.install(run),
            None => run(),
        }
    }
}
