//! Chat-completion abstraction used for every model call.
//!
//! [`LlmClient`] wraps a [`ChatBackend`] with a durable response cache, retry
//! with exponential backoff for transient failures, and a bound on in-flight
//! backend calls. A client without a backend is a pure replay of its cache.

mod cache;
mod client;
mod http;
mod mock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sha256_hex;

pub use cache::{CacheRecord, ResponseCache};
pub use client::{ClientStats, LlmClient, RetryPolicy, DEFAULT_MAX_IN_FLIGHT};
pub use http::{HttpBackend, API_KEY_ENV};
pub use mock::ScriptedBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl LlmRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn system_text(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }

    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::validation("request has no messages"));
        }
        if let Some(m) = self
            .messages
            .iter()
            .find(|m| m.role != Role::Assistant && m.content.trim().is_empty())
        {
            return Err(Error::validation(format!("empty {} message", m.role.as_str())));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::validation("temperature must be finite and non-negative"));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::validation("max_output_tokens must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub usage: Usage,
    pub cached: bool,
    pub latency_ms: u64,
}

impl LlmResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: Usage::default(),
            cached: false,
            latency_ms: 0,
        }
    }
}

/// A source of completions. Implementations must be callable from many threads.
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;

    fn chat(&self, request: &LlmRequest) -> Result<LlmResponse>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    ReplayCacheOnly,
    MockScripted,
    OracleSim,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "http" => Ok(BackendKind::Http),
            "replay_cache_only" | "replay" => Ok(BackendKind::ReplayCacheOnly),
            "mock_scripted" | "mock" => Ok(BackendKind::MockScripted),
            "oracle_sim" | "oracle" => Ok(BackendKind::OracleSim),
            other => Err(Error::Config(format!("unknown backend kind {other:?}"))),
        }
    }
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    v: u32,
    model: &'a str,
    messages: Vec<(&'a str, &'a str)>,
    temperature: f64,
    max_output_tokens: u32,
}

/// SHA-256 over a canonical JSON encoding of everything that affects the completion.
pub fn cache_key(request: &LlmRequest) -> String {
    let material = KeyMaterial {
        v: 1,
        model: &request.model,
        messages: request
            .messages
            .iter()
            .map(|m| (m.role.as_str(), m.content.as_str()))
            .collect(),
        temperature: request.temperature,
        max_output_tokens: request.max_output_tokens,
    };
    let bytes = serde_json::to_vec(&material).expect("key material is always serializable");
    sha256_hex(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> LlmRequest {
        LlmRequest::new(
            "m",
            vec![ChatMessage::system("sys"), ChatMessage::user("hello")],
        )
    }

    #[test]
    fn key_is_stable() {
        assert_eq!(cache_key(&req()), cache_key(&req()));
        assert_eq!(cache_key(&req()).len(), 64);
    }

    #[test]
    fn key_sees_content_changes() {
        let mut r = req();
        r.messages[1].content = "hellp".into();
        assert_ne!(cache_key(&r), cache_key(&req()));
    }

    #[test]
    fn key_sees_message_order() {
        let mut r = req();
        r.messages.swap(0, 1);
        assert_ne!(cache_key(&r), cache_key(&req()));
    }

    #[test]
    fn key_sees_temperature_and_budget() {
        assert_ne!(cache_key(&req().with_temperature(0.7)), cache_key(&req()));
        assert_ne!(cache_key(&req().with_max_output_tokens(7)), cache_key(&req()));
    }

    #[test]
    fn validation() {
        assert!(req().validate().is_ok());
        assert!(LlmRequest::new("m", vec![]).validate().is_err());
        assert!(LlmRequest::new("m", vec![ChatMessage::user(" ")]).validate().is_err());
        assert!(req().with_temperature(-1.0).validate().is_err());
    }
}
