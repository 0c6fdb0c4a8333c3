//! Chat-completion client: OpenAI-compatible HTTP transport, a cassette
//! transport for offline runs, retries with backoff, a token budget, a JSONL
//! audit log and bounded-concurrency batches.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_id: String,
}

impl ChatRequest {
    /// A single-turn request.
    pub fn user(
        request_id: impl Into<String>,
        model: impl Into<String>,
        prompt: impl Into<String>,
    ) -> Self {
        ChatRequest {
            model: model.into(),
            messages: vec![Message {
                role: Role::User,
                content: prompt.into(),
            }],
            temperature: 0.0,
            max_tokens: 1024,
            request_id: request_id.into(),
        }
    }

    pub fn with_sampling(mut self, temperature: f64, max_tokens: u32) -> Self {
        self.temperature = temperature;
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest("no user message".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} is not a finite non-negative number",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 over the fields that determine the reply; the request id is
    /// left out so the same prompt always hashes the same.
    pub fn hash(&self) -> String {
        let canonical = serde_json::json!({
            "model": self.model,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }

    /// Content of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }

    /// Rough upper bound on tokens this request can consume.
    pub fn estimated_tokens(&self) -> u64 {
        let chars: usize = self
            .messages
            .iter()
            .map(|m| m.content.chars().count())
            .sum();
        chars.div_ceil(4) as u64 + u64::from(self.max_tokens)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    #[default]
    Stop,
    Length,
    ContentFilter,
    Other,
}

impl FinishReason {
    fn parse(s: &str) -> Self {
        match s {
            "stop" => FinishReason::Stop,
            "length" => FinishReason::Length,
            "content_filter" => FinishReason::ContentFilter,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum GatewayError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited (retry after {retry_after:?} s)")]
    RateLimited { retry_after: Option<f64> },
    #[error("transport error (status {status}): {message}")]
    TransportError { status: u16, message: String },
    #[error("token budget exceeded: request needs {needed}, {remaining} left")]
    BudgetExceeded { needed: u64, remaining: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("environment variable {0} is not set")]
    MissingCredentials(String),
    #[error("no cassette entry for request {request_id} (hash {hash})")]
    NoCassetteEntry { request_id: String, hash: String },
    #[error("could not decode reply: {0}")]
    Decode(String),
}

impl GatewayError {
    /// Failures worth retrying with backoff.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Timeout | GatewayError::RateLimited { .. } => true,
            GatewayError::TransportError { status, .. } => {
                *status == 0 || *status == 408 || *status >= 500
            }
            _ => false,
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        (**self).send(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub path: String,
    pub auth_header: String,
    /// Prefix put before the key in the auth header, e.g. `Bearer`.
    pub auth_scheme: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "https://api.openai.com/v1".into(),
            path: "/chat/completions".into(),
            auth_header: "Authorization".into(),
            auth_scheme: "Bearer".into(),
            api_key_env: "LOGLM_API_KEY".into(),
            timeout_secs: 120,
        }
    }
}

pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    auth: Option<(String, String)>,
}

impl HttpTransport {
    /// Reads the API key from the configured environment variable. An empty
    /// variable name means the endpoint needs no credentials.
    pub fn new(config: &HttpConfig) -> Result<Self, GatewayError> {
        let auth = if config.api_key_env.is_empty() {
            None
        } else {
            let key = std::env::var(&config.api_key_env)
                .map_err(|_| GatewayError::MissingCredentials(config.api_key_env.clone()))?;
            let value = if config.auth_scheme.is_empty() {
                key
            } else {
                format!("{} {key}", config.auth_scheme)
            };
            Some((config.auth_header.clone(), value))
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(HttpTransport {
            agent,
            url: format!("{}{}", config.base_url.trim_end_matches('/'), config.path),
            auth,
        })
    }
}

#[derive(Deserialize)]
struct WireReply {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        let body = serde_json::json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut call = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some((name, value)) = &self.auth {
            call = call.header(name, value);
        }
        let start = Instant::now();
        let mut response = call.send(body.to_string()).map_err(|e| match e {
            ureq::Error::Timeout(_) => GatewayError::Timeout,
            other => GatewayError::TransportError {
                status: 0,
                message: other.to_string(),
            },
        })?;
        let status = response.status().as_u16();
        if status == 429 {
            let retry_after = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok());
            return Err(GatewayError::RateLimited { retry_after });
        }
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Decode(e.to_string()))?;
        if status != 200 {
            return Err(GatewayError::TransportError {
                status,
                message: text.chars().take(500).collect(),
            });
        }
        let wire: WireReply =
            serde_json::from_str(&text).map_err(|e| GatewayError::Decode(e.to_string()))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::Decode("reply has no choices".into()))?;
        let finish_reason = choice
            .finish_reason
            .as_deref()
            .map_or(FinishReason::Stop, FinishReason::parse);
        let content = choice.message.content.unwrap_or_default();
        if finish_reason == FinishReason::Stop && content.is_empty() {
            return Err(GatewayError::Decode(
                "empty content with finish_reason stop".into(),
            ));
        }
        let usage = wire.usage.map_or(Usage::default(), |u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        });
        Ok(ChatReply {
            content,
            finish_reason,
            usage,
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}

/// One scripted transport outcome.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedReply {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    /// HTTP status to simulate; absent means 200.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retry_after: Option<f64>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub timeout: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<FinishReason>,
    #[serde(skip_serializing_if = "is_zero")]
    pub latency_ms: u64,
}

fn is_zero(x: &u64) -> bool {
    *x == 0
}

impl ScriptedReply {
    pub fn ok(content: impl Into<String>) -> Self {
        ScriptedReply {
            content: Some(content.into()),
            ..Default::default()
        }
    }

    pub fn status(status: u16) -> Self {
        ScriptedReply {
            status: Some(status),
            ..Default::default()
        }
    }

    pub fn timeout() -> Self {
        ScriptedReply {
            timeout: true,
            ..Default::default()
        }
    }

    fn play(&self) -> Result<ChatReply, GatewayError> {
        if self.timeout {
            return Err(GatewayError::Timeout);
        }
        match self.status.unwrap_or(200) {
            200 => {
                let content = self.content.clone().unwrap_or_default();
                Ok(ChatReply {
                    usage: Usage {
                        prompt_tokens: 0,
                        completion_tokens: content.split_whitespace().count() as u64,
                    },
                    content,
                    finish_reason: self.finish_reason.unwrap_or_default(),
                    latency_ms: self.latency_ms,
                })
            }
            429 => Err(GatewayError::RateLimited {
                retry_after: self.retry_after,
            }),
            status => Err(GatewayError::TransportError {
                status,
                message: self.content.clone().unwrap_or_default(),
            }),
        }
    }
}

/// Replies keyed by request hash or, failing that, by exact prompt text.
/// Consecutive calls with the same key walk through `replies`; the last one
/// repeats once the script runs out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub replies: Vec<ScriptedReply>,
}

impl CassetteEntry {
    pub fn for_prompt(prompt: impl Into<String>, replies: Vec<ScriptedReply>) -> Self {
        CassetteEntry {
            hash: None,
            prompt: Some(prompt.into()),
            replies,
        }
    }

    pub fn for_request(request: &ChatRequest, replies: Vec<ScriptedReply>) -> Self {
        CassetteEntry {
            hash: Some(request.hash()),
            prompt: None,
            replies,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CassetteError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: entry {index} has neither hash nor prompt, or no replies")]
    BadEntry { path: PathBuf, index: usize },
}

pub struct CassetteTransport {
    entries: Vec<CassetteEntry>,
    by_hash: BTreeMap<String, usize>,
    by_prompt: BTreeMap<String, usize>,
    cursors: Mutex<Vec<usize>>,
}

impl CassetteTransport {
    pub fn new(entries: Vec<CassetteEntry>) -> Self {
        let mut by_hash = BTreeMap::new();
        let mut by_prompt = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if let Some(h) = &e.hash {
                by_hash.entry(h.clone()).or_insert(i);
            }
            if let Some(p) = &e.prompt {
                by_prompt.entry(p.clone()).or_insert(i);
            }
        }
        let cursors = Mutex::new(vec![0; entries.len()]);
        CassetteTransport {
            entries,
            by_hash,
            by_prompt,
            cursors,
        }
    }

    /// Loads a cassette file (JSON array or JSONL of entries) or every
    /// `.json`/`.jsonl` file of a directory, in file-name order.
    pub fn load(path: &Path) -> Result<Self, CassetteError> {
        let files = if path.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|source| CassetteError::Io {
                    path: path.to_path_buf(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("json" | "jsonl")
                    )
                })
                .collect();
            files.sort();
            files
        } else {
            vec![path.to_path_buf()]
        };
        let mut entries = Vec::new();
        for file in files {
            entries.extend(read_entries(&file)?);
        }
        Ok(CassetteTransport::new(entries))
    }

    pub fn save(entries: &[CassetteEntry], path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for e in entries {
            out.push_str(&serde_json::to_string(e).map_err(std::io::Error::other)?);
            out.push('\n');
        }
        fs::write(path, out)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn read_entries(path: &Path) -> Result<Vec<CassetteEntry>, CassetteError> {
    let text = fs::read_to_string(path).map_err(|source| CassetteError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, e: serde_json::Error| CassetteError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    };
    let entries: Vec<CassetteEntry> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| parse_err(e.line(), e))?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i + 1, e)))
            .collect::<Result<_, _>>()?
    };
    for (index, e) in entries.iter().enumerate() {
        if (e.hash.is_none() && e.prompt.is_none()) || e.replies.is_empty() {
            return Err(CassetteError::BadEntry {
                path: path.to_path_buf(),
                index,
            });
        }
    }
    Ok(entries)
}

impl Transport for CassetteTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        let hash = request.hash();
        let Some(&i) = self
            .by_hash
            .get(&hash)
            .or_else(|| self.by_prompt.get(request.prompt()))
        else {
            return Err(GatewayError::NoCassetteEntry {
                request_id: request.request_id.clone(),
                hash,
            });
        };
        let step = {
            let mut cursors = self.cursors.lock().expect("cassette lock");
            let step = cursors[i];
            cursors[i] += 1;
            step
        };
        let replies = &self.entries[i].replies;
        replies[step.min(replies.len() - 1)].play()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub request_id: String,
    pub request_hash: String,
    pub model: String,
    /// 1-based transport attempt; 0 when the request never left the gateway.
    pub attempt: u32,
    pub prompt: String,
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    pub ts_ms: u64,
}

const AUDIT_PROMPT_CHARS: usize = 240;

/// Append-only JSONL sink shared by all requests of a gateway.
pub struct AuditLog {
    sink: Mutex<Box<dyn Write + Send>>,
}

impl AuditLog {
    pub fn new(writer: impl Write + Send + 'static) -> Self {
        AuditLog {
            sink: Mutex::new(Box::new(writer)),
        }
    }

    pub fn append_to(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(AuditLog::new(file))
    }

    fn write(&self, records: &[AuditRecord]) {
        let mut sink = self.sink.lock().expect("audit lock");
        for r in records {
            if let Ok(line) = serde_json::to_string(r) {
                let _ = writeln!(sink, "{line}");
            }
        }
        let _ = sink.flush();
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): `base · 2^retry`, capped,
    /// or the server's `retry_after` hint when that is longer.
    pub fn delay(&self, retry: u32, error: &GatewayError) -> Duration {
        let exp = self.base_delay_ms.saturating_mul(1u64 << retry.min(20));
        let mut ms = exp.min(self.max_delay_ms);
        if let GatewayError::RateLimited {
            retry_after: Some(s),
        } = error
        {
            ms = ms.max(((s * 1000.0) as u64).min(self.max_delay_ms));
        }
        Duration::from_millis(ms)
    }
}

type Attempted = (Result<ChatReply, GatewayError>, Vec<AuditRecord>);

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct Gateway {
    transport: Box<dyn Transport>,
    retry: RetryPolicy,
    budget: Option<Mutex<u64>>,
    audit: Option<AuditLog>,
    sleeper: Sleeper,
}

impl Gateway {
    pub fn new(transport: impl Transport + 'static) -> Self {
        Gateway {
            transport: Box::new(transport),
            retry: RetryPolicy::default(),
            budget: None,
            audit: None,
            sleeper: Arc::new(thread::sleep),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Caps the total estimated tokens this gateway will spend.
    pub fn with_budget(mut self, tokens: u64) -> Self {
        self.budget = Some(Mutex::new(tokens));
        self
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    pub fn remaining_budget(&self) -> Option<u64> {
        self.budget
            .as_ref()
            .map(|b| *b.lock().expect("budget lock"))
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        let mut trail = Vec::new();
        let result = self.run(request, &mut trail);
        self.flush(&trail);
        result
    }

    /// Sends every request with at most `max_in_flight` outstanding at once.
    /// Results come back in request order; one failure does not stop the rest.
    pub fn complete_batch(
        &self,
        requests: &[ChatRequest],
        max_in_flight: usize,
    ) -> Result<Vec<Result<ChatReply, GatewayError>>, GatewayError> {
        if max_in_flight == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_in_flight must be at least 1".into(),
            ));
        }
        let slots: Vec<Mutex<Option<Attempted>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        thread::scope(|s| {
            for _ in 0..max_in_flight.min(requests.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(request) = requests.get(i) else {
                        break;
                    };
                    let mut trail = Vec::new();
                    let result = self.run(request, &mut trail);
                    *slots[i].lock().expect("slot lock") = Some((result, trail));
                });
            }
        });
        let mut results = Vec::with_capacity(requests.len());
        for slot in slots {
            let (result, trail) = slot
                .into_inner()
                .expect("slot lock")
                .expect("every slot is filled once the scope ends");
            self.flush(&trail);
            results.push(result);
        }
        Ok(results)
    }

    fn flush(&self, trail: &[AuditRecord]) {
        if let Some(audit) = &self.audit {
            audit.write(trail);
        }
    }

    fn record(
        &self,
        request: &ChatRequest,
        hash: &str,
        attempt: u32,
        result: &Result<ChatReply, GatewayError>,
    ) -> AuditRecord {
        let (outcome, reply, error, latency_ms) = match result {
            Ok(r) => ("ok", Some(r.content.clone()), None, Some(r.latency_ms)),
            Err(e) => ("error", None, Some(e.to_string()), None),
        };
        AuditRecord {
            request_id: request.request_id.clone(),
            request_hash: hash.to_string(),
            model: request.model.clone(),
            attempt,
            prompt: request.prompt().chars().take(AUDIT_PROMPT_CHARS).collect(),
            outcome: outcome.into(),
            reply,
            error,
            latency_ms,
            ts_ms: now_ms(),
        }
    }

    fn reserve(&self, request: &ChatRequest) -> Result<u64, GatewayError> {
        let needed = request.estimated_tokens();
        if let Some(budget) = &self.budget {
            let mut remaining = budget.lock().expect("budget lock");
            if needed > *remaining {
                return Err(GatewayError::BudgetExceeded {
                    needed,
                    remaining: *remaining,
                });
            }
            *remaining -= needed;
        }
        Ok(needed)
    }

    fn refund(&self, reserved: u64, usage: Usage) {
        let used = usage.prompt_tokens + usage.completion_tokens;
        if let (Some(budget), true) = (&self.budget, used > 0) {
            *budget.lock().expect("budget lock") += reserved.saturating_sub(used);
        }
    }

    fn run(
        &self,
        request: &ChatRequest,
        trail: &mut Vec<AuditRecord>,
    ) -> Result<ChatReply, GatewayError> {
        let hash = request.hash();
        let reserved = match request.validate().and_then(|()| self.reserve(request)) {
            Ok(n) => n,
            Err(e) => {
                let result = Err(e);
                trail.push(self.record(request, &hash, 0, &result));
                return result;
            }
        };
        let mut retry = 0;
        loop {
            let result = self.transport.send(request);
            trail.push(self.record(request, &hash, retry + 1, &result));
            match result {
                Ok(reply) => {
                    self.refund(reserved, reply.usage);
                    return Ok(reply);
                }
                Err(e) if e.is_transient() && retry < self.retry.max_retries => {
                    (self.sleeper)(self.retry.delay(retry, &e));
                    retry += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
