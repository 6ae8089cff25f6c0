//! Deterministic backend that replays canned responses from a rules file.
//!
//! Rules match either an exact request digest or a substring of the prompt
//! text. Digest rules are the precise tool for pinning a whole pipeline run;
//! substring rules are convenient for small hand-written tests. The backend
//! counts its calls so tests can assert that staged filters short-circuit
//! before any model call is made.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{read_records, Record};
use crate::error::{Error, Result};

use super::{request_digest, Backend, ChatRequest, ChatResponse};

/// How a scripted rule decides whether it answers a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleMatch {
    /// Matches exactly one request, by [`request_digest`] value.
    Digest(String),
    /// Matches any request whose "system\nuser" text contains the needle.
    Substring(String),
}

/// One canned response and the condition under which it is served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRule {
    #[serde(rename = "match")]
    pub matcher: RuleMatch,
    pub response: ChatResponse,
}

impl ScriptedRule {
    pub fn for_request(request: &ChatRequest, response: ChatResponse) -> Self {
        ScriptedRule {
            matcher: RuleMatch::Digest(request_digest(request)),
            response,
        }
    }
}

/// A read-only rule table implementing [`Backend`].
#[derive(Debug)]
pub struct ScriptedBackend {
    rules: Vec<ScriptedRule>,
    by_digest: HashMap<String, usize>,
    substring_order: Vec<usize>,
    identity: String,
    calls: AtomicU64,
}

impl ScriptedBackend {
    /// Loads rules from a line-delimited records file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rules = Vec::new();
        for record in read_records(path)? {
            match record {
                Record::Rule(rule) => rules.push(rule),
                other => {
                    return Err(Error::Config(format!(
                        "{}: expected only rule records, found a {} record",
                        path.display(),
                        other.kind()
                    )))
                }
            }
        }
        Self::from_rules(rules)
    }

    pub fn from_rules(rules: Vec<ScriptedRule>) -> Result<Self> {
        let mut by_digest = HashMap::new();
        let mut substring_order = Vec::new();
        for (index, rule) in rules.iter().enumerate() {
            rule.response.validate()?;
            // Responses may omit token logprobs entirely (not every request
            // asks for them), but present ones must spell out the text.
            if !rule.response.token_logprobs.is_empty() {
                let concatenated: String = rule
                    .response
                    .token_logprobs
                    .iter()
                    .map(|t| t.token.as_str())
                    .collect();
                if concatenated != rule.response.text {
                    return Err(Error::Config(format!(
                        "scripted rule {index}: token concatenation does not reproduce the text"
                    )));
                }
            }
            match &rule.matcher {
                RuleMatch::Digest(digest) => {
                    if by_digest.insert(digest.clone(), index).is_some() {
                        return Err(Error::Config(format!(
                            "scripted rules contain duplicate digest {digest}"
                        )));
                    }
                }
                RuleMatch::Substring(_) => substring_order.push(index),
            }
        }
        // A stable identity over the exact rule content, so the response
        // cache never serves answers recorded under a different script.
        let mut hasher = Sha256::new();
        for rule in &rules {
            hasher.update(serde_json::to_vec(rule).expect("rule serializes"));
            hasher.update([b'\n']);
        }
        let identity = format!("scripted-{}", &hex::encode(hasher.finalize())[..12]);
        Ok(ScriptedBackend {
            rules,
            by_digest,
            substring_order,
            identity,
            calls: AtomicU64::new(0),
        })
    }

    /// Number of completions served so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> String {
        self.identity.clone()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let digest = request_digest(request);
        if let Some(&index) = self.by_digest.get(&digest) {
            return Ok(self.rules[index].response.clone());
        }
        let haystack = format!("{}\n{}", request.system, request.user);
        for &index in &self.substring_order {
            if let RuleMatch::Substring(needle) = &self.rules[index].matcher {
                if haystack.contains(needle.as_str()) {
                    return Ok(self.rules[index].response.clone());
                }
            }
        }
        Err(Error::NoMatchingRule(digest))
    }
}

/// A canned single-token response, for rule construction.
pub fn single_token_response(text: &str, logprob: f64) -> ChatResponse {
    ChatResponse {
        text: text.to_string(),
        token_logprobs: vec![super::TokenLogprob::new(text, logprob)],
        first_token_alternatives: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::TokenLogprob;

    fn label_response(p_success: f64, p_failure: f64) -> ChatResponse {
        ChatResponse {
            text: "success".into(),
            token_logprobs: vec![TokenLogprob::new("success", p_success.ln())],
            first_token_alternatives: Some(vec![
                TokenLogprob::new("success", p_success.ln()),
                TokenLogprob::new("failure", p_failure.ln()),
            ]),
        }
    }

    #[test]
    fn digest_rule_answers_matching_request() {
        let request = ChatRequest::new("sys", "will it work?");
        let backend = ScriptedBackend::from_rules(vec![ScriptedRule::for_request(
            &request,
            label_response(0.7, 0.29),
        )])
        .unwrap();
        let response = backend.complete(&request).unwrap();
        assert_eq!(response.text, "success");
        let alternatives = response.first_token_alternatives.unwrap();
        assert_eq!(alternatives[0].token, "success");
        assert!((alternatives[0].logprob - 0.7_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unmatched_request_is_an_error() {
        let backend = ScriptedBackend::from_rules(vec![]).unwrap();
        let err = backend.complete(&ChatRequest::new("", "anything")).unwrap_err();
        assert!(matches!(err, Error::NoMatchingRule(_)));
    }

    #[test]
    fn substring_rules_match_in_file_order() {
        let rules = vec![
            ScriptedRule {
                matcher: RuleMatch::Substring("alpha".into()),
                response: single_token_response("first", -0.1),
            },
            ScriptedRule {
                matcher: RuleMatch::Substring("alp".into()),
                response: single_token_response("second", -0.1),
            },
        ];
        let backend = ScriptedBackend::from_rules(rules).unwrap();
        let response = backend.complete(&ChatRequest::new("", "say alpha")).unwrap();
        assert_eq!(response.text, "first");
    }

    #[test]
    fn duplicate_digests_are_rejected() {
        let request = ChatRequest::new("", "x");
        let rule = ScriptedRule::for_request(&request, single_token_response("a", 0.0));
        let err = ScriptedBackend::from_rules(vec![rule.clone(), rule]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn token_text_mismatch_is_rejected() {
        let bad = ScriptedRule {
            matcher: RuleMatch::Substring("x".into()),
            response: ChatResponse {
                text: "hello".into(),
                token_logprobs: vec![TokenLogprob::new("goodbye", -0.5)],
                first_token_alternatives: None,
            },
        };
        let err = ScriptedBackend::from_rules(vec![bad]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn calls_are_counted() {
        let backend = ScriptedBackend::from_rules(vec![ScriptedRule {
            matcher: RuleMatch::Substring("".into()),
            response: single_token_response("ok", 0.0),
        }])
        .unwrap();
        assert_eq!(backend.calls(), 0);
        backend.complete(&ChatRequest::new("", "a")).unwrap();
        backend.complete(&ChatRequest::new("", "b")).unwrap();
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn identity_tracks_rule_content() {
        let a = ScriptedBackend::from_rules(vec![ScriptedRule {
            matcher: RuleMatch::Substring("x".into()),
            response: single_token_response("a", 0.0),
        }])
        .unwrap();
        let b = ScriptedBackend::from_rules(vec![ScriptedRule {
            matcher: RuleMatch::Substring("x".into()),
            response: single_token_response("b", 0.0),
        }])
        .unwrap();
        assert_ne!(a.name(), b.name());
    }
}
