//! HTTP backend speaking a minimal, vendor-neutral chat-completion protocol.
//!
//! The wire shape is deliberately tiny so that adapters for specific vendors
//! stay thin. One POST per completion:
//!
//! ```text
//! POST <endpoint>
//! authorization: Bearer <credential>        (when the env var is set)
//! content-type: application/json
//!
//! {"model": "...",
//!  "system": "...", "user": "...",
//!  "temperature": 0.0, "max_tokens": 1024,
//!  "want_logprobs": true, "want_top_logprobs": 5,
//!  "response_schema": {"name": "...", "schema": {...}} | null}
//! ```
//!
//! and the endpoint answers with a JSON [`ChatResponse`]:
//!
//! ```text
//! {"text": "...",
//!  "token_logprobs": [{"token": "...", "logprob": -0.1}, ...],
//!  "first_token_alternatives": [{"token": "...", "logprob": -0.3}, ...] | null}
//! ```
//!
//! Transport failures (connection errors, timeouts, HTTP 429/5xx) are
//! retried with exponential backoff; any other failure is surfaced
//! immediately so judgments never silently vary between attempts.

use std::time::Duration;

use serde::Serialize;

use crate::error::{Error, Result};

use super::{Backend, ChatRequest, ChatResponse};

/// Env var read for the bearer credential unless overridden in config.
pub const DEFAULT_CREDENTIAL_ENV: &str = "PATCHFUNNEL_API_KEY";

const DEFAULT_ATTEMPTS: u32 = 3;
const DEFAULT_BASE_BACKOFF: Duration = Duration::from_millis(250);
const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Connection settings for a [`RemoteBackend`].
#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the env var holding the bearer credential.
    pub credential_env: String,
    pub attempts: u32,
    pub base_backoff: Duration,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            credential_env: DEFAULT_CREDENTIAL_ENV.to_string(),
            attempts: DEFAULT_ATTEMPTS,
            base_backoff: DEFAULT_BASE_BACKOFF,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

/// Runs `operation` up to `attempts` times, sleeping `base * 2^(i-1)` between
/// tries. Only transient errors (see [`Error::is_transient`]) are retried;
/// the final transport error reports the total attempt count.
pub fn with_retries<T>(
    attempts: u32,
    base: Duration,
    mut operation: impl FnMut() -> Result<T>,
) -> Result<T> {
    assert!(attempts >= 1, "retry budget must allow at least one attempt");
    let mut attempt = 1;
    loop {
        match operation() {
            Ok(value) => return Ok(value),
            Err(error) if error.is_transient() && attempt < attempts => {
                let delay = base.saturating_mul(1 << (attempt - 1).min(16));
                log::warn!("transient backend failure (attempt {attempt}/{attempts}): {error}");
                std::thread::sleep(delay);
                attempt += 1;
            }
            Err(Error::Transport { message, .. }) => {
                return Err(Error::Transport {
                    attempts: attempt,
                    message,
                })
            }
            Err(error) => return Err(error),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    #[serde(flatten)]
    request: &'a ChatRequest,
}

/// Live HTTP backend.
#[derive(Debug)]
pub struct RemoteBackend {
    config: RemoteConfig,
    credential: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let credential = std::env::var(&config.credential_env).ok();
        if credential.is_none() {
            return Err(Error::Config(format!(
                "remote backend requires the {} env var",
                config.credential_env
            )));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(RemoteBackend {
            config,
            credential,
            client,
        })
    }

    fn post_once(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let wire = WireRequest {
            model: &self.config.model,
            request,
        };
        let mut builder = self.client.post(&self.config.endpoint).json(&wire);
        if let Some(credential) = &self.credential {
            builder = builder.bearer_auth(credential);
        }
        let response = builder.send().map_err(|e| Error::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Error::Transport {
                attempts: 1,
                message: format!("http status {status}"),
            });
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(Error::RemoteStatus {
                status: status.as_u16(),
                body,
            });
        }
        let body = response.text().map_err(|e| Error::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        serde_json::from_str(&body)
            .map_err(|e| Error::SchemaViolation(format!("malformed completion body: {e}")))
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> String {
        format!("remote-{}-{}", self.config.model, self.config.endpoint)
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        with_retries(self.config.attempts, self.config.base_backoff, || {
            self.post_once(request)
        })
    }
}
