//! Backend gateway: configuration, cache keys, mock and HTTP backends,
//! retries, rate limiting and the on-disk response cache.

mod cache;
mod client;
mod limiter;
mod mock;
mod parse;
mod wire;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::Prompt;

pub use cache::{CacheEntry, ResponseCache};
#[cfg(feature = "http")]
pub use client::UreqTransport;
pub use client::{Backend, BackendReply, Gateway, GatewayReply, MockBackend, Telemetry, TelemetrySnapshot};
pub use client::{HttpBackend, HttpRequest, HttpResponse, Transport, TransportError};
pub use limiter::{Clock, RetryPolicy, SystemClock, TokenBucket};
pub use mock::{mock_region, mock_response, mock_score, mock_score_value, MockOutcome, MOCK_JITTER};
pub use parse::{parse_region, parse_score, ScoredResponse, Usage};
pub use wire::{chat_request_body, extract_completion};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no score in [0, 4] found in response: {0:?}")]
    NoScoreFound(String),
    #[error("authentication rejected with HTTP {0}")]
    AuthFailure(u16),
    #[error("gave up after {attempts} attempts; last error: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("{0}")]
    Prompt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    #[default]
    Mock,
    OpenaiCompatible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub provider: Provider,
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub requests_per_minute: u32,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub max_tokens: Option<u32>,
    /// Seed of the mock backend's jitter.
    pub mock_seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            provider: Provider::Mock,
            base_url: "https://api.openai.com/v1".into(),
            model_name: "mock".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            max_retries: 5,
            requests_per_minute: 60,
            timeout_secs: 120,
            max_in_flight: 4,
            max_tokens: None,
            mock_seed: 0,
        }
    }
}

impl BackendConfig {
    pub fn mock(seed: u64) -> Self {
        Self {
            mock_seed: seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(m.to_string()));
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be finite and >= 0");
        }
        if self.requests_per_minute < 1 {
            return bad("requests_per_minute must be >= 1");
        }
        if self.max_in_flight < 1 {
            return bad("max_in_flight must be >= 1");
        }
        if self.model_name.is_empty() {
            return bad("model_name is empty");
        }
        if self.provider == Provider::OpenaiCompatible && self.base_url.is_empty() {
            return bad("base_url is empty");
        }
        Ok(())
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    /// Reads the key from the configured environment variable.
    pub fn api_key(&self) -> Result<String, GatewayError> {
        std::env::var(&self.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| GatewayError::MissingApiKey(self.api_key_env.clone()))
    }
}

/// SHA-256 over length-prefixed canonical prompt bytes, model name,
/// temperature bits and template hash. Hex encoded.
pub fn cache_key(prompt: &Prompt, backend: &BackendConfig) -> String {
    let mut h = Sha256::new();
    let mut feed = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    feed(&prompt.canonical_bytes());
    feed(backend.model_name.as_bytes());
    feed(&backend.temperature.to_bits().to_le_bytes());
    feed(prompt.template_hash.as_bytes());
    hex::encode(h.finalize())
}
