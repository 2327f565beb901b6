//! Backends and the gateway that fronts them with cache, retries and limits.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    cache_key, chat_request_body, extract_completion, mock::mock_response, parse_score, BackendConfig, CacheEntry,
    Clock, GatewayError, Provider, ResponseCache, RetryPolicy, ScoredResponse, SystemClock, TokenBucket, Usage,
};
use crate::prompt::Prompt;

const EPOCH: &str = "1970-01-01T00:00:00Z";

pub struct BackendReply {
    pub content: String,
    pub usage: Option<Usage>,
}

pub trait Backend: Send + Sync {
    /// Returns the raw response body.
    fn call(&self, prompt: &Prompt, key: &str) -> Result<String, GatewayError>;
    /// Extracts the assistant text from a raw body.
    fn interpret(&self, raw: &str) -> Result<BackendReply, GatewayError>;
    /// Whether `call` touches the network (drives rate limiting and telemetry).
    fn is_remote(&self) -> bool;
    /// Timestamp recorded with fresh responses.
    fn timestamp(&self) -> String;
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    pub seed: u64,
}

impl Backend for MockBackend {
    fn call(&self, prompt: &Prompt, key: &str) -> Result<String, GatewayError> {
        mock_response(prompt, self.seed, key)
    }

    fn interpret(&self, raw: &str) -> Result<BackendReply, GatewayError> {
        Ok(BackendReply {
            content: raw.to_string(),
            usage: None,
        })
    }

    fn is_remote(&self) -> bool {
        false
    }

    /// Fixed so mock runs are byte-reproducible.
    fn timestamp(&self) -> String {
        EPOCH.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Timeout,
    Other(String),
}

pub trait Transport: Send + Sync {
    fn post(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

#[cfg(feature = "http")]
pub struct UreqTransport {
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

#[cfg(feature = "http")]
impl Transport for UreqTransport {
    fn post(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut builder = self.agent.post(&req.url);
        for (k, v) in &req.headers {
            builder = builder.header(k, v);
        }
        match builder.send(&req.body[..]) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let body = resp
                    .body_mut()
                    .with_config()
                    .limit(64 * 1024 * 1024)
                    .read_to_string()
                    .map_err(|e| match e {
                        ureq::Error::Timeout(_) => TransportError::Timeout,
                        e => TransportError::Other(e.to_string()),
                    })?;
                Ok(HttpResponse { status, body })
            }
            Err(ureq::Error::Timeout(_)) => Err(TransportError::Timeout),
            Err(e) => Err(TransportError::Other(e.to_string())),
        }
    }
}

/// Chat-completions backend over an injectable transport.
pub struct HttpBackend {
    config: BackendConfig,
    api_key: String,
    transport: Box<dyn Transport>,
}

impl HttpBackend {
    /// Resolves the API key from the configured environment variable.
    pub fn new(config: BackendConfig, transport: Box<dyn Transport>) -> Result<Self, GatewayError> {
        let api_key = config.api_key()?;
        Ok(Self::with_key(config, api_key, transport))
    }

    pub fn with_key(config: BackendConfig, api_key: String, transport: Box<dyn Transport>) -> Self {
        Self {
            config,
            api_key,
            transport,
        }
    }
}

impl Backend for HttpBackend {
    fn call(&self, prompt: &Prompt, _key: &str) -> Result<String, GatewayError> {
        let req = HttpRequest {
            url: self.config.endpoint(),
            headers: vec![
                ("Authorization".into(), format!("Bearer {}", self.api_key)),
                ("Content-Type".into(), "application/json".into()),
            ],
            body: chat_request_body(prompt, &self.config),
            timeout: Duration::from_secs(self.config.timeout_secs.max(1)),
        };
        match self.transport.post(&req) {
            Ok(r) if (200..300).contains(&r.status) => Ok(r.body),
            Ok(r) if r.status == 401 || r.status == 403 => Err(GatewayError::AuthFailure(r.status)),
            Ok(r) => Err(GatewayError::Http {
                status: r.status,
                body: r.body.chars().take(200).collect(),
            }),
            Err(TransportError::Timeout) => Err(GatewayError::Timeout),
            Err(TransportError::Other(m)) => Err(GatewayError::Transport(m)),
        }
    }

    fn interpret(&self, raw: &str) -> Result<BackendReply, GatewayError> {
        let (content, usage) = extract_completion(raw)?;
        Ok(BackendReply { content, usage })
    }

    fn is_remote(&self) -> bool {
        true
    }

    fn timestamp(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }
}

#[derive(Debug, Default)]
pub struct Telemetry {
    network_calls: AtomicU64,
    backend_calls: AtomicU64,
    retries: AtomicU64,
    cache_hits: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TelemetrySnapshot {
    pub network_calls: u64,
    pub backend_calls: u64,
    pub retries: u64,
    pub cache_hits: u64,
}

impl Telemetry {
    pub fn snapshot(&self) -> TelemetrySnapshot {
        TelemetrySnapshot {
            network_calls: self.network_calls.load(Ordering::SeqCst),
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayReply {
    pub key: String,
    pub raw: String,
    pub content: String,
    pub usage: Option<Usage>,
    pub cache_hit: bool,
    /// When the response was first received (the cache entry's timestamp on hits).
    pub created_at: String,
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Thread-safe front end: cache lookup, in-flight limit, rate limit, retries.
pub struct Gateway {
    config: BackendConfig,
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    policy: RetryPolicy,
    bucket: TokenBucket,
    clock: Arc<dyn Clock>,
    slots: Slots,
    telemetry: Telemetry,
}

impl Gateway {
    pub fn new(config: BackendConfig, backend: Arc<dyn Backend>, cache: Option<ResponseCache>) -> Self {
        Self::with_clock(config, backend, cache, Arc::new(SystemClock::default()))
    }

    pub fn with_clock(
        config: BackendConfig,
        backend: Arc<dyn Backend>,
        cache: Option<ResponseCache>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let burst = (config.max_in_flight as u32).min(config.requests_per_minute).max(1);
        Self {
            policy: RetryPolicy::new(config.max_retries),
            bucket: TokenBucket::new(config.requests_per_minute, burst, clock.now()),
            slots: Slots {
                free: Mutex::new(config.max_in_flight.max(1)),
                cv: Condvar::new(),
            },
            telemetry: Telemetry::default(),
            config,
            backend,
            cache,
            clock,
        }
    }

    /// Builds the backend named by `config.provider`.
    pub fn from_config(config: BackendConfig, cache: Option<ResponseCache>) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Arc<dyn Backend> = match config.provider {
            Provider::Mock => Arc::new(MockBackend { seed: config.mock_seed }),
            #[cfg(feature = "http")]
            Provider::OpenaiCompatible => {
                let transport = UreqTransport::new(Duration::from_secs(config.timeout_secs.max(1)));
                Arc::new(HttpBackend::new(config.clone(), Box::new(transport))?)
            }
            #[cfg(not(feature = "http"))]
            Provider::OpenaiCompatible => return Err(GatewayError::Config("built without the `http` feature".into())),
        };
        Ok(Self::new(config, backend, cache))
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn telemetry(&self) -> TelemetrySnapshot {
        self.telemetry.snapshot()
    }

    pub fn timestamp(&self) -> String {
        self.backend.timestamp()
    }

    pub fn key(&self, prompt: &Prompt) -> String {
        cache_key(prompt, &self.config)
    }

    pub fn send(&self, prompt: &Prompt) -> Result<GatewayReply, GatewayError> {
        let key = self.key(prompt);
        if let Some(entry) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            if let Ok(reply) = self.backend.interpret(&entry.response) {
                self.telemetry.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(GatewayReply {
                    key,
                    raw: entry.response,
                    content: reply.content,
                    usage: reply.usage,
                    cache_hit: true,
                    created_at: entry.created_at,
                });
            }
        }
        let raw = {
            let _slot = self.slots.acquire();
            self.call_with_retries(prompt, &key)?
        };
        let reply = self.backend.interpret(&raw)?;
        let created_at = self.backend.timestamp();
        if let Some(cache) = &self.cache {
            cache.put(&CacheEntry {
                key: key.clone(),
                response: raw.clone(),
                created_at: created_at.clone(),
            })?;
        }
        Ok(GatewayReply {
            key,
            raw,
            content: reply.content,
            usage: reply.usage,
            cache_hit: false,
            created_at,
        })
    }

    fn call_with_retries(&self, prompt: &Prompt, key: &str) -> Result<String, GatewayError> {
        let mut rng = ChaCha8Rng::from_seed(key_seed(key));
        let mut attempt = 0u32;
        loop {
            if self.backend.is_remote() {
                self.bucket.acquire(self.clock.as_ref());
                self.telemetry.network_calls.fetch_add(1, Ordering::SeqCst);
            }
            self.telemetry.backend_calls.fetch_add(1, Ordering::SeqCst);
            let err = match self.backend.call(prompt, key) {
                Ok(raw) => return Ok(raw),
                Err(e @ GatewayError::Http { status, .. }) if RetryPolicy::is_retryable(status) => e,
                Err(e @ GatewayError::Transport(_)) => e,
                Err(e) => return Err(e),
            };
            if attempt >= self.policy.max_retries {
                return Err(GatewayError::Exhausted {
                    attempts: attempt + 1,
                    last: err.to_string(),
                });
            }
            self.telemetry.retries.fetch_add(1, Ordering::SeqCst);
            self.clock.sleep(self.policy.delay(attempt, &mut rng));
            attempt += 1;
        }
    }

    /// Sends a score prompt and parses the reply.
    pub fn score(&self, prompt: &Prompt) -> Result<(ScoredResponse, GatewayReply), GatewayError> {
        let reply = self.send(prompt)?;
        let mut scored = parse_score(&reply.content)?;
        scored.usage = reply.usage;
        Ok((scored, reply))
    }
}

fn key_seed(key: &str) -> [u8; 32] {
    let mut seed = [0u8; 32];
    if let Ok(bytes) = hex::decode(key) {
        for (s, b) in seed.iter_mut().zip(bytes) {
            *s = b;
        }
    }
    seed
}
