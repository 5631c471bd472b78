//! Chat-completion client with retry and exponential backoff.
//!
//! Wire format: `POST {base_url}/chat/completions` with
//! `{"model", "messages": [{"role", "content"}], "temperature"?}`; the reply
//! text is read from `choices[0].message.content`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Agent, AgentRequest, ChatMessage};
use crate::error::{AgentError, Error, Result};

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    4
}
fn default_initial_backoff() -> u64 {
    1_000
}
fn default_backoff_factor() -> f64 {
    2.0
}
fn default_max_backoff() -> u64 {
    30_000
}
fn default_jitter() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. The token
    /// itself is never written anywhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
    /// Forwarded only when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_initial_backoff")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_backoff_factor")]
    pub backoff_factor: f64,
    #[serde(default = "default_max_backoff")]
    pub max_backoff_ms: u64,
    /// Relative jitter applied to each delay (0.2 = ±20%).
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Cap on in-flight requests to this endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_concurrent_requests: Option<usize>,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            token_env: None,
            temperature: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            initial_backoff_ms: default_initial_backoff(),
            backoff_factor: default_backoff_factor(),
            max_backoff_ms: default_max_backoff(),
            jitter: default_jitter(),
            max_concurrent_requests: None,
        }
    }

    pub fn backoff(&self) -> Backoff {
        Backoff {
            initial: Duration::from_millis(self.initial_backoff_ms),
            factor: self.backoff_factor,
            cap: Duration::from_millis(self.max_backoff_ms),
            jitter: self.jitter,
        }
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub initial: Duration,
    pub factor: f64,
    pub cap: Duration,
    pub jitter: f64,
}

impl Backoff {
    /// Un-jittered delay before retry number `retry` (1-based), capped.
    pub fn base_delay(&self, retry: u32) -> Duration {
        let scaled = self.initial.as_secs_f64() * self.factor.powi(retry.saturating_sub(1) as i32);
        Duration::from_secs_f64(scaled.min(self.cap.as_secs_f64()))
    }

    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let base = self.base_delay(retry).as_secs_f64();
        let spread = if self.jitter > 0.0 { rng.gen_range(-self.jitter..=self.jitter) } else { 0.0 };
        Duration::from_secs_f64((base * (1.0 + spread)).clamp(0.0, self.cap.as_secs_f64()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits), freed: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap_or_else(|e| e.into_inner());
        }
        *permits -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Done(String),
    Retry { status: Option<u16>, message: String },
    Fail { status: Option<u16>, message: String },
}

pub struct RemoteAgent {
    id: String,
    config: EndpointConfig,
    http: ureq::Agent,
    limiter: Option<Semaphore>,
    jitter_rng: Mutex<ChaCha8Rng>,
}

impl RemoteAgent {
    pub fn new(id: &str, config: EndpointConfig) -> Result<Self> {
        if !(config.timeout_secs.is_finite() && config.timeout_secs > 0.0) {
            return Err(Error::Config(format!("agent `{id}`: timeout_secs must be positive")));
        }
        let http: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            id: id.to_string(),
            limiter: config.max_concurrent_requests.map(|n| Semaphore::new(n.max(1))),
            jitter_rng: Mutex::new(ChaCha8Rng::seed_from_u64(crate::seed::fnv1a(id.as_bytes()))),
            config,
            http,
        })
    }

    fn error(&self, status: Option<u16>, attempts: u32, message: String) -> AgentError {
        AgentError { agent: self.id.clone(), status, attempts, message }
    }

    fn token(&self) -> Result<Option<String>, AgentError> {
        match &self.config.token_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                self.error(None, 0, format!("environment variable `{var}` holding the API token is not set"))
            }),
        }
    }

    fn attempt(&self, body: &serde_json::Value, token: Option<&str>) -> Attempt {
        let mut request = self.http.post(self.config.completions_url());
        if let Some(token) = token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = match request.send_json(body) {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry { status: None, message: format!("transport error: {e}") };
            }
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry { status: Some(status), message: format!("reading body: {e}") },
        };
        match status {
            200..=299 => match extract_content(&text) {
                Some(content) => Attempt::Done(content),
                None => Attempt::Fail {
                    status: Some(status),
                    message: "response has no choices[0].message.content".into(),
                },
            },
            429 | 500..=599 => Attempt::Retry { status: Some(status), message: snippet(&text) },
            _ => Attempt::Fail { status: Some(status), message: snippet(&text) },
        }
    }

    /// One chat completion, retrying transient failures (transport errors,
    /// timeouts, 429, 5xx). Other 4xx statuses fail immediately.
    pub fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, AgentError> {
        let token = self.token()?;
        let mut body = json!({ "model": self.config.model, "messages": messages });
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        let backoff = self.config.backoff();
        let _permit = self.limiter.as_ref().map(Semaphore::acquire);

        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body, token.as_deref()) {
                Attempt::Done(text) => return Ok(Completion { text, attempts }),
                Attempt::Fail { status, message } => return Err(self.error(status, attempts, message)),
                Attempt::Retry { status, message } => {
                    if attempts > self.config.max_retries {
                        return Err(self.error(status, attempts, format!("retries exhausted: {message}")));
                    }
                    let delay = {
                        let mut rng = self.jitter_rng.lock().unwrap_or_else(|e| e.into_inner());
                        backoff.delay(attempts, &mut *rng)
                    };
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

impl Agent for RemoteAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&self, request: &AgentRequest<'_>) -> Result<String, AgentError> {
        self.complete(request.messages).map(|c| c.text)
    }
}

fn extract_content(body: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(body).ok()?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(str::to_string)
}

fn snippet(body: &str) -> String {
    let trimmed = body.trim();
    match trimmed.char_indices().nth(200) {
        Some((i, _)) => format!("{}…", &trimmed[..i]),
        None => trimmed.to_string(),
    }
}
