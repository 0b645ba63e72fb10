//! Chat-completions gateway with a content-addressed response cache,
//! retries, an in-flight limit and fixture replay.
//!
//! Every request is reduced to a canonical byte stream and hashed with
//! SHA-256. The hash keys both the cache directory and the fixture directory,
//! which share one layout:
//!
//! ```text
//! <dir>/<hash>/request.json   canonical request (images as digests)
//! <dir>/<hash>/response.txt   raw completion text
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tracing::{debug, warn};

use crate::error::{Error, Result};
use crate::media::write_file;

pub const ENV_API_BASE: &str = "VTRIM_API_BASE";
pub const ENV_API_KEY: &str = "VTRIM_API_KEY";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4o";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Text(String),
    Image { media_type: String, data: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRequest {
    pub model: String,
    pub temperature: f64,
    pub max_output: u32,
    pub parts: Vec<Part>,
}

impl AgentRequest {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            temperature: 0.0,
            max_output: 1024,
            parts: Vec::new(),
        }
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.parts.push(Part::Text(text.into()));
        self
    }

    pub fn image(mut self, media_type: impl Into<String>, data: Vec<u8>) -> Self {
        self.parts.push(Part::Image {
            media_type: media_type.into(),
            data,
        });
        self
    }

    pub fn text_parts(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(|p| match p {
            Part::Text(t) => Some(t.as_str()),
            Part::Image { .. } => None,
        })
    }

    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, Part::Image { .. }))
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.text_parts().next().is_none() {
            return Err(Error::InvalidInput("request has no text part".into()));
        }
        if self
            .parts
            .iter()
            .any(|p| matches!(p, Part::Image { data, .. } if data.is_empty()))
        {
            return Err(Error::InvalidInput("request has an empty image".into()));
        }
        Ok(())
    }

    /// OpenAI-style chat-completions body: one user message whose content
    /// interleaves text parts and base64 data-URL image parts.
    pub fn to_wire(&self) -> serde_json::Value {
        let content: Vec<serde_json::Value> = self
            .parts
            .iter()
            .map(|p| match p {
                Part::Text(t) => json!({"type": "text", "text": t}),
                Part::Image { media_type, data } => json!({
                    "type": "image_url",
                    "image_url": {
                        "url": format!(
                            "data:{media_type};base64,{}",
                            base64::engine::general_purpose::STANDARD.encode(data)
                        )
                    }
                }),
            })
            .collect();
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_output,
            "messages": [{"role": "user", "content": content}],
        })
    }

    /// Human-readable record stored next to cached responses.
    fn to_record(&self) -> serde_json::Value {
        let parts: Vec<serde_json::Value> = self
            .parts
            .iter()
            .map(|p| match p {
                Part::Text(t) => json!({"type": "text", "text": t}),
                Part::Image { media_type, data } => json!({
                    "type": "image",
                    "media_type": media_type,
                    "bytes": data.len(),
                    "sha256": hex::encode(Sha256::digest(data)),
                }),
            })
            .collect();
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "max_output": self.max_output,
            "parts": parts,
        })
    }
}

/// Stable content hash of a request.
///
/// The hash covers the model name, temperature bits, output limit and every
/// part in order (tag, media type and payload), each length-prefixed.
pub fn canonical_hash(req: &AgentRequest) -> String {
    fn field(h: &mut Sha256, bytes: &[u8]) {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    let mut h = Sha256::new();
    field(&mut h, b"vtrim-request-v1");
    field(&mut h, req.model.as_bytes());
    h.update(req.temperature.to_bits().to_le_bytes());
    h.update(req.max_output.to_le_bytes());
    h.update((req.parts.len() as u64).to_le_bytes());
    for part in &req.parts {
        match part {
            Part::Text(t) => {
                h.update(b"T");
                field(&mut h, t.as_bytes());
            }
            Part::Image { media_type, data } => {
                h.update(b"I");
                field(&mut h, media_type.as_bytes());
                field(&mut h, data);
            }
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseSource {
    Live,
    Cache,
    Mock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentResponse {
    pub text: String,
    pub usage: Usage,
    pub source: ResponseSource,
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendError {
    /// Network-level failure, 5xx, 408 or 429; retried.
    Transport(String),
    /// Other 4xx; never retried.
    Status(u16, String),
    /// No fixture for this request hash.
    Miss(String),
}

pub struct BackendReply {
    pub text: String,
    pub usage: Usage,
}

/// Where completions actually come from.
pub trait Backend: Send + Sync {
    fn call(&self, req: &AgentRequest, hash: &str) -> std::result::Result<BackendReply, BackendError>;

    /// Whether replies are fresh model output (cached) or replayed fixtures.
    fn is_replay(&self) -> bool {
        false
    }
}

/// Live HTTP endpoint speaking the chat-completions wire format.
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Self {
            agent,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        }
    }

    /// Reads the endpoint and credential from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self> {
        let base = std::env::var(ENV_API_BASE).unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        if key.is_none() && base == DEFAULT_API_BASE {
            return Err(Error::Config(format!(
                "{ENV_API_KEY} is not set for the live backend"
            )));
        }
        Ok(Self::new(&base, key, timeout))
    }

    /// Pulls text and usage out of a chat-completions response body.
    pub fn parse_reply(body: &str) -> std::result::Result<BackendReply, String> {
        let v: serde_json::Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| "response has no choices[0].message.content".to_string())?
            .to_string();
        let usage = Usage {
            input_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            output_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(BackendReply { text, usage })
    }
}

impl Backend for HttpBackend {
    fn call(&self, req: &AgentRequest, _: &str) -> std::result::Result<BackendReply, BackendError> {
        let mut builder = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            builder = builder.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = builder
            .send_json(req.to_wire())
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => Self::parse_reply(&body).map_err(BackendError::Transport),
            408 | 429 => Err(BackendError::Transport(format!("http {status}: {body}"))),
            400..=499 => Err(BackendError::Status(status, body)),
            _ => Err(BackendError::Transport(format!("http {status}: {body}"))),
        }
    }
}

/// Serves `response.txt` files from a fixture (or cache) directory.
pub struct FixtureBackend {
    dir: PathBuf,
    fallback: Option<Box<dyn Backend>>,
}

impl FixtureBackend {
    /// Strict replay: unknown requests fail with [`Error::MockMiss`].
    pub fn strict(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            fallback: None,
        }
    }

    /// Unknown requests are delegated to `fallback`.
    pub fn with_fallback(dir: impl Into<PathBuf>, fallback: Box<dyn Backend>) -> Self {
        Self {
            dir: dir.into(),
            fallback: Some(fallback),
        }
    }
}

impl Backend for FixtureBackend {
    fn call(&self, req: &AgentRequest, hash: &str) -> std::result::Result<BackendReply, BackendError> {
        let path = self.dir.join(hash).join("response.txt");
        match fs::read_to_string(&path) {
            Ok(text) => Ok(BackendReply {
                text,
                usage: Usage::default(),
            }),
            Err(_) => match &self.fallback {
                Some(fb) => fb.call(req, hash),
                None => Err(BackendError::Miss(hash.to_string())),
            },
        }
    }

    fn is_replay(&self) -> bool {
        true
    }
}

/// Adapts a closure into a backend; used by scripted agents and tests.
pub struct FnBackend<F>(pub F);

impl<F> Backend for FnBackend<F>
where
    F: Fn(&AgentRequest) -> std::result::Result<String, BackendError> + Send + Sync,
{
    fn call(&self, req: &AgentRequest, _: &str) -> std::result::Result<BackendReply, BackendError> {
        (self.0)(req).map(|text| BackendReply {
            text,
            usage: Usage::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub model: String,
    pub temperature: f64,
    pub max_output: u32,
    /// Retries after the first attempt on transport errors.
    pub retry_limit: u32,
    pub backoff_ms: u64,
    pub in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            model: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            max_output: 1024,
            retry_limit: 3,
            backoff_ms: 500,
            in_flight: 8,
            timeout_secs: 120,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_flight == 0 {
            return Err(Error::Config("in_flight must be >= 1".into()));
        }
        if self.model.trim().is_empty() {
            return Err(Error::Config("model name is empty".into()));
        }
        Ok(())
    }

    pub fn request(&self) -> AgentRequest {
        AgentRequest {
            model: self.model.clone(),
            temperature: self.temperature,
            max_output: self.max_output,
            parts: Vec::new(),
        }
    }
}

/// Counting semaphore bounding concurrent backend calls.
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.active.lock().unwrap_or_else(|p| p.into_inner());
        while *n >= self.limit {
            n = self.cv.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.active.lock().unwrap_or_else(|p| p.into_inner());
        *n -= 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GatewayStats {
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub peak_in_flight: u64,
}

/// Thread-safe front door for every agent call.
pub struct Gateway {
    backend: Box<dyn Backend>,
    cache_dir: Option<PathBuf>,
    config: GatewayConfig,
    limiter: InFlight,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
    current: AtomicU64,
    peak: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>, config: GatewayConfig) -> Self {
        Self {
            limiter: InFlight::new(config.in_flight),
            backend,
            cache_dir: None,
            config,
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            current: AtomicU64::new(0),
            peak: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Empty request pre-filled with model, temperature and output limit.
    pub fn request(&self) -> AgentRequest {
        self.config.request()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            peak_in_flight: self.peak.load(Ordering::SeqCst),
        }
    }

    pub fn complete(&self, req: &AgentRequest) -> Result<AgentResponse> {
        req.validate()?;
        let hash = canonical_hash(req);
        if let Some(text) = self.cache_lookup(&hash) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(AgentResponse {
                text,
                usage: Usage::default(),
                source: ResponseSource::Cache,
            });
        }

        let mut attempt = 0u32;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                let r = self.backend.call(req, &hash);
                self.current.fetch_sub(1, Ordering::SeqCst);
                r
            };
            match result {
                Ok(reply) if !reply.text.trim().is_empty() || self.backend.is_replay() => {
                    let source = if self.backend.is_replay() {
                        ResponseSource::Mock
                    } else {
                        self.cache_store(&hash, req, &reply.text)?;
                        ResponseSource::Live
                    };
                    return Ok(AgentResponse {
                        text: reply.text,
                        usage: reply.usage,
                        source,
                    });
                }
                Ok(_) => {
                    // Empty completions are not cached; the caller re-asks.
                    return Ok(AgentResponse {
                        text: String::new(),
                        usage: Usage::default(),
                        source: ResponseSource::Live,
                    });
                }
                Err(BackendError::Miss(h)) => return Err(Error::MockMiss(h)),
                Err(BackendError::Status(code, body)) => {
                    return Err(Error::Config(format!("endpoint returned {code}: {body}")))
                }
                Err(BackendError::Transport(msg)) => {
                    if attempt >= self.config.retry_limit {
                        return Err(Error::AgentUnavailable(format!(
                            "{msg} (after {} attempts)",
                            attempt + 1
                        )));
                    }
                    let delay = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
                    warn!(attempt, delay_ms = delay, error = %msg, "agent call failed, retrying");
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
            }
        }
    }

    fn cache_lookup(&self, hash: &str) -> Option<String> {
        let dir = self.cache_dir.as_ref()?;
        let text = fs::read_to_string(dir.join(hash).join("response.txt")).ok()?;
        debug!(hash, "cache hit");
        Some(text)
    }

    fn cache_store(&self, hash: &str, req: &AgentRequest, text: &str) -> Result<()> {
        let Some(dir) = &self.cache_dir else {
            return Ok(());
        };
        store_entry(dir, hash, req, text)
    }
}

/// Writes one `(request.json, response.txt)` pair.
pub fn store_entry(dir: &Path, hash: &str, req: &AgentRequest, text: &str) -> Result<()> {
    let entry = dir.join(hash);
    let record = serde_json::to_vec_pretty(&req.to_record())?;
    write_file(&entry.join("request.json"), &record)?;
    write_file(&entry.join("response.txt"), text.as_bytes())
}
