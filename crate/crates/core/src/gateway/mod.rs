//! Uniform model-backend contract: text completions with per-token log
//! probabilities.
//!
//! Every policy in this crate talks to a model through [`Backend`], so the
//! whole pipeline runs offline and reproducibly against the deterministic
//! [`ScriptedBackend`], and against a live HTTP endpoint via
//! [`RemoteBackend`] without any other code changing. A content-addressed
//! [`ResponseCache`] can wrap any backend.

mod cache;
mod remote;
mod scripted;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use cache::{CachedBackend, ResponseCache};
pub use remote::{with_retries, RemoteBackend, RemoteConfig, DEFAULT_CREDENTIAL_ENV};
pub use scripted::{single_token_response, RuleMatch, ScriptedBackend, ScriptedRule};

/// Default completion budget for prompts that expect prose output.
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

/// Structured-output descriptor: a named object schema the model is asked to
/// conform to. Backends that cannot enforce it still receive it as a hint;
/// the caller then parses leniently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSchema {
    pub name: String,
    pub schema: serde_json::Value,
}

/// One chat-style completion request.
///
/// Serialization of this struct is the wire format of the remote protocol
/// and the input to [`request_digest`]; field order is part of the contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    /// Sampling temperature; 0 means greedy decoding.
    pub temperature: f64,
    pub max_tokens: u32,
    /// Whether per-token log probabilities of the response are requested.
    pub want_logprobs: bool,
    /// How many alternatives to report for the first content token;
    /// requires `want_logprobs`.
    pub want_top_logprobs: u32,
    pub response_schema: Option<ResponseSchema>,
}

impl ChatRequest {
    /// A greedy-decoding request with no logprobs and no schema.
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            system: system.into(),
            user: user.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            want_logprobs: false,
            want_top_logprobs: 0,
            response_schema: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_tokens < 1 {
            return Err(Error::InvalidInput("max_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidInput(
                "temperature must be finite and non-negative".into(),
            ));
        }
        if self.want_top_logprobs > 0 && !self.want_logprobs {
            return Err(Error::InvalidInput(
                "want_top_logprobs requires want_logprobs".into(),
            ));
        }
        Ok(())
    }
}

/// One response token with its log probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

impl TokenLogprob {
    pub fn new(token: impl Into<String>, logprob: f64) -> Self {
        TokenLogprob {
            token: token.into(),
            logprob,
        }
    }
}

/// A completion, with token-level log probabilities when they were requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default)]
    pub token_logprobs: Vec<TokenLogprob>,
    /// Alternatives considered for the first content token of the response,
    /// present when `want_top_logprobs > 0`.
    #[serde(default)]
    pub first_token_alternatives: Option<Vec<TokenLogprob>>,
}

impl ChatResponse {
    /// Checks that all log probabilities are actual log probabilities.
    pub fn validate(&self) -> Result<()> {
        let all = self
            .token_logprobs
            .iter()
            .chain(self.first_token_alternatives.iter().flatten());
        for tl in all {
            if !(tl.logprob <= 0.0) {
                return Err(Error::SchemaViolation(format!(
                    "logprob {} for token {:?} is not ≤ 0",
                    tl.logprob, tl.token
                )));
            }
        }
        Ok(())
    }

    pub fn logprobs(&self) -> Vec<f64> {
        self.token_logprobs.iter().map(|t| t.logprob).collect()
    }
}

/// Anything that can answer a [`ChatRequest`].
///
/// Implementations must be safe to call from many workers at once.
pub trait Backend: Send + Sync {
    /// Stable identity used to key the response cache; must change whenever
    /// the backend's behavior could change (different rules file, different
    /// model or endpoint).
    fn name(&self) -> String;

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        (**self).complete(request)
    }
}

/// Sends a request through a backend, enforcing the request and response
/// contracts on both sides.
pub fn complete(request: &ChatRequest, backend: &dyn Backend) -> Result<ChatResponse> {
    request.validate()?;
    let response = backend.complete(request)?;
    response.validate()?;
    Ok(response)
}

/// Content digest of a request: 64 hex characters of SHA-256 over the
/// canonical JSON serialization. Stable across processes and platforms;
/// changes iff any request field changes.
pub fn request_digest(request: &ChatRequest) -> String {
    let bytes = serde_json::to_vec(request).expect("ChatRequest always serializes");
    hex::encode(Sha256::digest(bytes))
}
