//! Uniform interface to text-generation services.
//!
//! A [`Backend`] wraps either an HTTP chat-completion endpoint or a
//! deterministic scripted mock behind one `generate` call with retries,
//! rate limiting, and a persistent cache. Cache keys are a pure function
//! of the prompt and the generation-affecting parts of the configuration,
//! so re-running a stage performs zero service calls.

mod cache;
mod http;
mod limiter;
mod mock;

pub use cache::{parse_store, GenerationCache};
pub use limiter::{Clock, RateLimiter, SystemClock};
pub use mock::{mock_script, MockEntry, MockRule, MockScript};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::hashutil;

/// Decoding contract for all backends. Greedy decoding is expressed over
/// the wire as temperature 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Decoding {
    #[default]
    Greedy,
}

impl Decoding {
    fn tag(self) -> &'static str {
        match self {
            Decoding::Greedy => "greedy",
        }
    }
}

/// Request body layout for HTTP backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WireProtocol {
    /// OpenAI-style chat completion with a single user message.
    #[default]
    ChatCompletions,
    /// Raw completion, for services fine-tuned on bare stage inputs.
    Completions,
}

impl WireProtocol {
    fn tag(self) -> &'static str {
        match self {
            WireProtocol::ChatCompletions => "chat",
            WireProtocol::Completions => "completion",
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpParams {
    pub endpoint: String,
    /// Name of the environment variable holding the API credential. The
    /// credential itself never appears in configs or manifests.
    pub api_key_env: Option<String>,
    pub wire: WireProtocol,
}

#[derive(Debug, Clone)]
pub enum BackendKind {
    Http(HttpParams),
    Mock(MockScript),
}

#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_name: String,
    pub max_new_tokens: u32,
    pub decoding: Decoding,
    pub timeout: Duration,
    pub max_retries: u32,
    /// `None` means unlimited.
    pub requests_per_minute: Option<u32>,
    /// First retry delay; doubles per attempt, capped at 30 s.
    pub initial_backoff: Duration,
}

impl BackendConfig {
    pub fn mock(script: MockScript) -> Self {
        Self {
            kind: BackendKind::Mock(script),
            model_name: "mock".to_string(),
            max_new_tokens: 80,
            decoding: Decoding::Greedy,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            requests_per_minute: None,
            initial_backoff: Duration::from_millis(500),
        }
    }

    pub fn http(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http(HttpParams {
                endpoint: endpoint.into(),
                api_key_env: None,
                wire: WireProtocol::ChatCompletions,
            }),
            model_name: model_name.into(),
            max_new_tokens: 80,
            decoding: Decoding::Greedy,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            requests_per_minute: None,
            initial_backoff: Duration::from_millis(500),
        }
    }

    /// Digest of the generation-affecting configuration. Timeout, retry,
    /// and rate-limit settings deliberately stay out: they change how a
    /// result is obtained, not what it is.
    pub fn fingerprint(&self) -> String {
        let kind_part = match &self.kind {
            BackendKind::Http(params) => {
                format!("http|{}|{}", params.endpoint, params.wire.tag())
            }
            BackendKind::Mock(script) => format!("mock|{}", script.digest()),
        };
        let canonical = format!(
            "{kind_part}|{model}|{tokens}|{decoding}",
            model = self.model_name,
            tokens = self.max_new_tokens,
            decoding = self.decoding.tag()
        );
        hashutil::short_hex_digest(&[canonical.as_bytes()])
    }

    fn validate(&self) -> Result<(), BackendError> {
        if self.max_new_tokens == 0 {
            return Err(BackendError::InvalidConfig(
                "max_new_tokens must be at least 1".to_string(),
            ));
        }
        if self.requests_per_minute == Some(0) {
            return Err(BackendError::InvalidConfig(
                "requests_per_minute must be positive or unlimited".to_string(),
            ));
        }
        if let BackendKind::Http(params) = &self.kind {
            let uri: ureq::http::Uri = params
                .endpoint
                .parse()
                .map_err(|e| BackendError::InvalidConfig(format!("endpoint: {e}")))?;
            match uri.scheme_str() {
                Some("http") | Some("https") => {}
                other => {
                    return Err(BackendError::InvalidConfig(format!(
                        "endpoint scheme must be http or https, got {other:?}"
                    )))
                }
            }
        }
        Ok(())
    }
}

/// One backend call, recorded exactly as it happened. The output is never
/// trimmed or normalized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt: String,
    pub output: String,
    pub backend_fingerprint: String,
    pub cache_key: String,
    pub timestamp: u64,
    pub attempt_count: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("cache io at {path}: {source}")]
    CacheIo {
        path: String,
        source: std::io::Error,
    },
    #[error("cache store corrupted at line {line}: {reason}")]
    CorruptCache { line: usize, reason: String },
    #[error("cached record fingerprint {found} does not match current config {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("network failure after {attempts} attempts: {detail}")]
    Network { attempts: u32, detail: String },
    #[error("service returned status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed service response: {0}")]
    MalformedResponse(String),
    #[error("rate limit wait exceeded the configured timeout")]
    RateLimitExhausted,
    #[error("environment variable {0} is not set")]
    MissingCredential(String),
}

/// Counters for cache effectiveness; process-local, never serialized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BackendStats {
    pub generation_calls: u64,
    pub cache_hits: u64,
}

pub struct Backend {
    config: BackendConfig,
    fingerprint: String,
    cache: Option<Mutex<GenerationCache>>,
    limiter: Option<RateLimiter>,
    clock: Arc<dyn Clock>,
    agent: Option<ureq::Agent>,
    calls: AtomicU64,
    hits: AtomicU64,
}

impl Backend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        Self::build(config, None)
    }

    /// Backend with a persistent generation cache at `cache_path`.
    pub fn with_cache(
        config: BackendConfig,
        cache_path: &std::path::Path,
    ) -> Result<Self, BackendError> {
        let cache = GenerationCache::open(cache_path)?;
        Self::build(config, Some(cache))
    }

    fn build(config: BackendConfig, cache: Option<GenerationCache>) -> Result<Self, BackendError> {
        config.validate()?;
        let fingerprint = config.fingerprint();
        let limiter = config.requests_per_minute.map(RateLimiter::new);
        let agent = match config.kind {
            BackendKind::Http(_) => {
                let agent_config = ureq::Agent::config_builder()
                    .timeout_global(Some(config.timeout))
                    .http_status_as_error(false)
                    .build();
                Some(ureq::Agent::new_with_config(agent_config))
            }
            BackendKind::Mock(_) => None,
        };
        Ok(Self {
            config,
            fingerprint,
            cache: cache.map(Mutex::new),
            limiter,
            clock: Arc::new(SystemClock),
            agent,
            calls: AtomicU64::new(0),
            hits: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn stats(&self) -> BackendStats {
        BackendStats {
            generation_calls: self.calls.load(Ordering::Relaxed),
            cache_hits: self.hits.load(Ordering::Relaxed),
        }
    }

    pub fn cache_key(&self, prompt: &str) -> String {
        hashutil::hex_digest(&[self.fingerprint.as_bytes(), b"\n", prompt.as_bytes()])
    }

    /// Generate a completion for `prompt`, serving from the cache when
    /// possible. Safe to call from many threads.
    pub fn generate(&self, prompt: &str) -> Result<GenerationRecord, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let key = self.cache_key(prompt);

        if let Some(cache) = &self.cache {
            let cache = cache.lock().expect("cache lock");
            if let Some(record) = cache.get(&key) {
                if record.backend_fingerprint != self.fingerprint {
                    return Err(BackendError::FingerprintMismatch {
                        expected: self.fingerprint.clone(),
                        found: record.backend_fingerprint.clone(),
                    });
                }
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(record.clone());
            }
        }

        self.calls.fetch_add(1, Ordering::Relaxed);
        let (output, attempts, timestamp) = match &self.config.kind {
            BackendKind::Mock(script) => (script.respond(prompt), 1, 0),
            BackendKind::Http(params) => {
                let agent = self.agent.as_ref().expect("http backend has an agent");
                let (output, attempts) = http::generate(
                    agent,
                    params,
                    &self.config,
                    self.limiter.as_ref(),
                    self.clock.as_ref(),
                    prompt,
                )?;
                let now = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .unwrap_or_default()
                    .as_secs();
                (output, attempts, now)
            }
        };

        let record = GenerationRecord {
            prompt: prompt.to_string(),
            output,
            backend_fingerprint: self.fingerprint.clone(),
            cache_key: key,
            timestamp,
            attempt_count: attempts,
        };
        if let Some(cache) = &self.cache {
            cache.lock().expect("cache lock").put(record.clone())?;
        }
        Ok(record)
    }
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend")
            .field("model", &self.config.model_name)
            .field("fingerprint", &self.fingerprint)
            .finish()
    }
}
