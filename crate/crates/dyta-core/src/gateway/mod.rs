//! Chat-completion gateway: one `complete()` abstraction over two
//! interchangeable backends (OpenAI-compatible HTTP, deterministic mock),
//! with retry, bounded concurrency, a replayable call ledger, and robust
//! parsing of ranked-list outputs.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::CandidatePage;
use crate::ItemId;

mod ledger;
mod live;
mod mock;
mod parse;

pub use ledger::{read_ledger, LedgerEntry, ReplayBackend};
pub use live::{LiveBackend, LiveSettings};
pub use mock::{FailureKind, MockBackend, MockPolicy};
pub use parse::{parse_ranking, ParseError, ParsedRanking};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// What page a ranking request is about. Mock ranking policies need this to
/// act; it is never serialized into a live HTTP request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageContext {
    pub page_order: Vec<ItemId>,
    pub ground_truth: Option<ItemId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub model_name: String,
    pub max_tokens: u32,
    /// Which pipeline stage issued the call (e.g. `tpe.seq`, `act.profile`).
    pub tag: String,
    /// Side-channel for the mock backend; absent for non-ranking stages.
    pub page_context: Option<PageContext>,
}

impl ChatRequest {
    pub fn new(tag: impl Into<String>, model_name: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            messages: vec![Message::user(user_prompt)],
            temperature: 0.1,
            top_p: 0.9,
            model_name: model_name.into(),
            max_tokens: 512,
            tag: tag.into(),
            page_context: None,
        }
    }

    pub fn with_system(mut self, content: impl Into<String>) -> Self {
        self.messages.insert(0, Message::system(content));
        self
    }

    pub fn with_page(mut self, page: &CandidatePage) -> Self {
        self.page_context = Some(PageContext {
            page_order: page.order.clone(),
            ground_truth: Some(page.ground_truth),
        });
        self
    }

    pub fn with_sampling(mut self, temperature: f64, top_p: f64) -> Self {
        self.temperature = temperature;
        self.top_p = top_p;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub content: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

/// How a single backend call failed, which decides whether the gateway
/// retries it.
#[derive(Debug, Error)]
pub enum BackendError {
    /// Timeout, HTTP 429, or 5xx — worth retrying with backoff.
    #[error("transient backend failure: {0}")]
    Retryable(String),
    /// HTTP 401/403 — a configuration problem, never retried.
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    /// Anything else (other 4xx, malformed response body, script miss).
    #[error("{0}")]
    Fatal(String),
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed (HTTP {status}); check DYTA_API_KEY and base_url")]
    Auth { status: u16 },
    #[error("backend failed after {attempts} attempts; last error: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("environment variable {0} is not set")]
    MissingApiKey(&'static str),
    #[error("writing ledger: {0}")]
    Ledger(#[from] std::io::Error),
}

/// Per-stage sampling override, keyed by tag in the configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSampling {
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
}

/// Model name and sampling defaults every pipeline stage builds its
/// requests from, with optional per-tag overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestDefaults {
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub stage_overrides: std::collections::BTreeMap<String, StageSampling>,
}

impl Default for RequestDefaults {
    fn default() -> Self {
        Self {
            model_name: "gpt-4o-mini".into(),
            temperature: 0.1,
            top_p: 0.9,
            max_tokens: 512,
            stage_overrides: Default::default(),
        }
    }
}

impl RequestDefaults {
    /// A request for `tag` carrying `user_prompt`, with any per-stage
    /// sampling override applied.
    pub fn request(&self, tag: &str, user_prompt: String) -> ChatRequest {
        let mut request = ChatRequest::new(tag, self.model_name.clone(), user_prompt);
        request.temperature = self.temperature;
        request.top_p = self.top_p;
        request.max_tokens = self.max_tokens;
        if let Some(stage) = self.stage_overrides.get(tag) {
            if let Some(temperature) = stage.temperature {
                request.temperature = temperature;
            }
            if let Some(top_p) = stage.top_p {
                request.top_p = top_p;
            }
        }
        request
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// First backoff delay; doubles per retry (500 → 500ms, 1s, 2s...).
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay_ms: 500 }
    }
}

/// A backend that can answer chat requests. Implementations must be safe to
/// call from multiple threads.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

/// The gateway owns a backend and layers retry, concurrency limiting, and
/// the call ledger on top of it.
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    retry: RetryPolicy,
    limiter: Option<Semaphore>,
    ledger: Mutex<Vec<LedgerEntry>>,
    sink: Option<Mutex<std::io::BufWriter<std::fs::File>>>,
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            limiter: None,
            ledger: Mutex::new(Vec::new()),
            sink: None,
        }
    }

    pub fn mock(policy: MockPolicy) -> Self {
        Self::new(Box::new(MockBackend::new(policy)))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Bounds in-flight backend calls (used with the live backend).
    pub fn with_concurrency(mut self, max_in_flight: usize) -> Self {
        self.limiter = Some(Semaphore::new(max_in_flight.max(1)));
        self
    }

    /// Also appends each ledger entry to a JSONL file as it is recorded.
    pub fn with_ledger_file(mut self, path: &std::path::Path) -> Result<Self, GatewayError> {
        let file = std::fs::File::create(path)?;
        self.sink = Some(Mutex::new(std::io::BufWriter::new(file)));
        Ok(self)
    }

    pub fn backend_id(&self) -> String {
        self.backend.id().to_string()
    }

    /// Sends one chat request, retrying transient failures with exponential
    /// backoff, and records the successful call in the ledger.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        validate(request)?;
        let _permit = self.limiter.as_ref().map(Semaphore::acquire);
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.backend.complete(request) {
                Ok(content) => {
                    let latency_ms = started.elapsed().as_millis() as u64;
                    self.record(request, &content, attempt, latency_ms)?;
                    return Ok(ChatResponse {
                        content,
                        backend_id: self.backend.id().to_string(),
                        latency_ms,
                        attempt_count: attempt,
                    });
                }
                Err(BackendError::Retryable(last)) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(GatewayError::Exhausted { attempts: attempt, last });
                    }
                    let delay = self.retry.base_delay_ms << (attempt - 1);
                    log::debug!(
                        "tag {}: attempt {attempt} failed transiently ({last}); retrying in {delay}ms",
                        request.tag
                    );
                    std::thread::sleep(Duration::from_millis(delay));
                }
                Err(BackendError::Auth(status)) => return Err(GatewayError::Auth { status }),
                Err(BackendError::Fatal(msg)) => return Err(GatewayError::Backend(msg)),
            }
        }
    }

    /// Snapshot of all ledger entries recorded so far.
    pub fn ledger(&self) -> Vec<LedgerEntry> {
        self.ledger.lock().expect("ledger lock").clone()
    }

    pub fn ledger_len(&self) -> usize {
        self.ledger.lock().expect("ledger lock").len()
    }

    pub fn flush_ledger(&self) -> Result<(), GatewayError> {
        if let Some(sink) = &self.sink {
            use std::io::Write;
            sink.lock().expect("sink lock").flush()?;
        }
        Ok(())
    }

    fn record(
        &self,
        request: &ChatRequest,
        content: &str,
        attempts: u32,
        latency_ms: u64,
    ) -> Result<(), GatewayError> {
        let entry = LedgerEntry {
            tag: request.tag.clone(),
            request_digest: request_digest(request),
            response_content: content.to_string(),
            attempts,
            latency_ms,
        };
        if let Some(sink) = &self.sink {
            use std::io::Write;
            let mut sink = sink.lock().expect("sink lock");
            serde_json::to_writer(&mut *sink, &entry).map_err(std::io::Error::other)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        self.ledger.lock().expect("ledger lock").push(entry);
        Ok(())
    }
}

fn validate(request: &ChatRequest) -> Result<(), GatewayError> {
    if request.messages.is_empty() {
        return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
    }
    if !(0.0..=2.0).contains(&request.temperature) {
        return Err(GatewayError::InvalidRequest(format!(
            "temperature {} outside 0..=2",
            request.temperature
        )));
    }
    if !(request.top_p > 0.0 && request.top_p <= 1.0) {
        return Err(GatewayError::InvalidRequest(format!(
            "top_p {} outside (0, 1]",
            request.top_p
        )));
    }
    Ok(())
}

/// A stable digest of everything the backend sees: tag, model, sampling
/// parameters, and messages. The page side-channel is deliberately excluded
/// (live requests never carry it), so live captures replay cleanly.
pub fn request_digest(request: &ChatRequest) -> String {
    #[derive(Serialize)]
    struct Canonical<'a> {
        tag: &'a str,
        model_name: &'a str,
        temperature: f64,
        top_p: f64,
        max_tokens: u32,
        messages: &'a [Message],
    }
    let canonical = serde_json::to_string(&Canonical {
        tag: &request.tag,
        model_name: &request.model_name,
        temperature: request.temperature,
        top_p: request.top_p,
        max_tokens: request.max_tokens,
        messages: &request.messages,
    })
    .expect("canonical request serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hex::encode(hasher.finalize())
}

/// Sends a ranking request and parses the reply into a full permutation of
/// the page. On a parse failure, retries once with a reformatting
/// instruction appended; if that also fails to parse, falls back to page
/// order with `repaired` set. Transport errors still surface as errors.
pub fn complete_ranking(
    gateway: &Gateway,
    request: &ChatRequest,
    page: &CandidatePage,
) -> Result<ParsedRanking, GatewayError> {
    let candidates: Vec<ItemId> = page.order.clone();
    let response = gateway.complete(request)?;
    match parse_ranking(&response.content, &candidates, &page.order) {
        Ok(parsed) => Ok(parsed),
        Err(ParseError::NoRecognizedIds) => {
            let mut retry = request.clone();
            retry.messages.push(Message::assistant(response.content));
            retry.messages.push(Message::user(
                "That reply could not be read as a ranking. Reply again with exactly one line: \
                 the candidate ids in ranked order, best first, separated by commas. \
                 Use only the numeric ids shown in brackets.",
            ));
            let second = gateway.complete(&retry)?;
            match parse_ranking(&second.content, &candidates, &page.order) {
                Ok(mut parsed) => {
                    parsed.repaired = true;
                    Ok(parsed)
                }
                Err(ParseError::NoRecognizedIds) => {
                    log::warn!(
                        "tag {}: ranking unparseable twice; falling back to page order",
                        request.tag
                    );
                    Ok(ParsedRanking { order: page.order.clone(), repaired: true })
                }
            }
        }
    }
}

/// Minimal counting semaphore (std has none that is stable and blocking).
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

struct SemaphorePermit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits), available: Condvar::new() }
    }

    fn acquire(&self) -> SemaphorePermit<'_> {
        let mut permits = self.permits.lock().expect("semaphore lock");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore wait");
        }
        *permits -= 1;
        SemaphorePermit(self)
    }
}

impl Drop for SemaphorePermit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore lock") += 1;
        self.0.available.notify_one();
    }
}
