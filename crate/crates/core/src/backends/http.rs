//! JSON-over-HTTP adapter.
//!
//! Each request is a `POST` of `{"prompt", "temperature", "max_tokens",
//! "seed"}` to a single endpoint; the reply must be `{"text": "..."}`.
//! Connection failures and 5xx statuses map to [`BackendError::Transport`]
//! (retried by the client); other non-2xx statuses map to
//! [`BackendError::Refused`] carrying the response body.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenerationRequest};

/// Environment variable holding the endpoint URL.
pub const ENDPOINT_ENV: &str = "MEDEVAL_ENDPOINT";
/// Environment variable holding the bearer token, if the endpoint needs one.
pub const TOKEN_ENV: &str = "MEDEVAL_TOKEN";

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

pub struct HttpBackend {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Self {
        Self::with_timeout(endpoint, token, Duration::from_secs(120))
    }

    pub fn with_timeout(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpBackend { endpoint: endpoint.into(), token, agent }
    }

    /// Reads the endpoint from [`ENDPOINT_ENV`] and the token from [`TOKEN_ENV`].
    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| BackendError::InvalidRequest(format!("{ENDPOINT_ENV} is not set")))?;
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Ok(Self::new(endpoint, token))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let body = WireRequest {
            prompt: &request.prompt,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            seed: request.seed,
        };
        let mut call = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            call = call.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = call.send_json(&body).map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if status >= 500 {
            let msg = response.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Transport(format!("HTTP {status}: {msg}")));
        }
        if !(200..300).contains(&status) {
            let msg = response.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Refused(format!("HTTP {status}: {msg}")));
        }
        let parsed: WireResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Refused(format!("malformed response body: {e}")))?;
        Ok(parsed.text)
    }
}
