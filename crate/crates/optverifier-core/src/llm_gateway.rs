//! Provider-agnostic chat-completion access with token accounting and
//! deterministic record/replay.
//!
//! A [`Gateway`] wraps one backend:
//! - `live`: OpenAI-compatible chat-completions over HTTP,
//! - `replay`: responses served from a cassette by request fingerprint,
//! - `scripted`: an in-memory response queue for offline tests.
//!
//! Any backend can be wrapped with a recorder that appends
//! fingerprint/response pairs to a cassette file (JSON Lines, one entry per
//! line: `{"fp": "<hex>", "response": {"content", "prompt_tokens",
//! "completion_tokens"}}`). An optional leading `{"meta": ...}` line carries
//! the recorded model name and date.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const API_KEY_ENV: &str = "OPTVERIFIER_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Token usage for one call. `estimated` marks counts derived from content
/// length instead of provider-reported numbers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(default)]
    pub estimated: bool,
}

impl TokenUsage {
    /// Fallback estimate: one token per four characters, rounded up.
    pub fn estimate(prompt_chars: usize, completion_chars: usize) -> Self {
        TokenUsage {
            prompt_tokens: prompt_chars.div_ceil(4) as u64,
            completion_tokens: completion_chars.div_ceil(4) as u64,
            estimated: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: TokenUsage,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("replay miss: no cassette entry for request ending with {role} message {preview:?}")]
    ReplayMiss { role: String, preview: String },
    #[error("authentication error: {0}")]
    Auth(String),
    #[error("scripted backend exhausted: no response left for request {0}")]
    ScriptExhausted(usize),
    #[error("cassette error: {0}")]
    Cassette(String),
}

/// Configuration of the live OpenAI-compatible backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiveConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key: String,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_max_retries() -> u32 {
    3
}

impl LiveConfig {
    /// Read the API key from `OPTVERIFIER_API_KEY`.
    pub fn from_env(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        LiveConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key: std::env::var(API_KEY_ENV).unwrap_or_default(),
            max_retries: default_max_retries(),
        }
    }
}

/// One recorded cassette entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CassetteEntry {
    fp: String,
    response: CassetteResponse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CassetteResponse {
    content: String,
    prompt_tokens: u64,
    completion_tokens: u64,
    #[serde(default)]
    estimated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CassetteMeta {
    meta: Value,
}

/// An ordered fingerprint -> response log; fingerprints are unique.
#[derive(Debug, Default)]
pub struct Cassette {
    entries: HashMap<String, ChatResponse>,
    order: Vec<String>,
    pub metadata: Option<Value>,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let file = std::fs::File::open(path)
            .map_err(|e| GatewayError::Cassette(format!("cannot open {}: {e}", path.display())))?;
        let reader = std::io::BufReader::new(file);
        let mut cassette = Cassette::default();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| {
                GatewayError::Cassette(format!("read error at line {}: {e}", lineno + 1))
            })?;
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(meta) = serde_json::from_str::<CassetteMeta>(&line) {
                cassette.metadata = Some(meta.meta);
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| {
                GatewayError::Cassette(format!("bad cassette entry at line {}: {e}", lineno + 1))
            })?;
            let response = ChatResponse {
                content: entry.response.content,
                usage: TokenUsage {
                    prompt_tokens: entry.response.prompt_tokens,
                    completion_tokens: entry.response.completion_tokens,
                    estimated: entry.response.estimated,
                },
            };
            // First entry wins on duplicate fingerprints.
            if !cassette.entries.contains_key(&entry.fp) {
                cassette.order.push(entry.fp.clone());
                cassette.entries.insert(entry.fp, response);
            }
        }
        Ok(cassette)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, fingerprint: &str) -> Option<&ChatResponse> {
        self.entries.get(fingerprint)
    }
}

/// Append-only cassette writer; one JSON line per recorded call.
#[derive(Debug)]
pub struct CassetteWriter {
    file: std::fs::File,
    seen: std::collections::HashSet<String>,
}

impl CassetteWriter {
    pub fn create(path: &Path, model_name: &str) -> Result<Self, GatewayError> {
        let mut file = std::fs::File::create(path).map_err(|e| {
            GatewayError::Cassette(format!("cannot create {}: {e}", path.display()))
        })?;
        let meta = CassetteMeta {
            meta: json!({
                "model_name": model_name,
                "recorded_at_unix": std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            }),
        };
        writeln!(file, "{}", serde_json::to_string(&meta).unwrap())
            .map_err(|e| GatewayError::Cassette(e.to_string()))?;
        Ok(CassetteWriter {
            file,
            seen: Default::default(),
        })
    }

    fn append(&mut self, fingerprint: &str, response: &ChatResponse) -> Result<(), GatewayError> {
        if !self.seen.insert(fingerprint.to_string()) {
            return Ok(());
        }
        let entry = CassetteEntry {
            fp: fingerprint.to_string(),
            response: CassetteResponse {
                content: response.content.clone(),
                prompt_tokens: response.usage.prompt_tokens,
                completion_tokens: response.usage.completion_tokens,
                estimated: response.usage.estimated,
            },
        };
        writeln!(self.file, "{}", serde_json::to_string(&entry).unwrap())
            .map_err(|e| GatewayError::Cassette(e.to_string()))
    }
}

enum Backend {
    Live {
        config: LiveConfig,
        agent: ureq::Agent,
    },
    Replay(Cassette),
    Scripted(Mutex<VecDeque<ChatResponse>>),
}

/// Chat-completion gateway. Safe to share across concurrent pipeline runs.
pub struct Gateway {
    backend: Backend,
    recorder: Option<Mutex<CassetteWriter>>,
}

impl Gateway {
    pub fn live(config: LiveConfig) -> Self {
        Gateway {
            backend: Backend::Live {
                config,
                agent: ureq::Agent::new_with_defaults(),
            },
            recorder: None,
        }
    }

    pub fn replay(cassette: Cassette) -> Self {
        Gateway {
            backend: Backend::Replay(cassette),
            recorder: None,
        }
    }

    pub fn replay_file(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::replay(Cassette::load(path)?))
    }

    /// Deterministic offline backend returning the queued responses in call
    /// order. Combine with [`Gateway::with_recorder`] to build cassettes.
    pub fn scripted(responses: Vec<ChatResponse>) -> Self {
        Gateway {
            backend: Backend::Scripted(Mutex::new(responses.into())),
            recorder: None,
        }
    }

    /// Convenience: scripted backend from reply texts with estimated usage.
    pub fn scripted_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::scripted(
            texts
                .into_iter()
                .map(|t| {
                    let content: String = t.into();
                    let usage = TokenUsage::estimate(0, content.len());
                    ChatResponse { content, usage }
                })
                .collect(),
        )
    }

    pub fn with_recorder(mut self, writer: CassetteWriter) -> Self {
        self.recorder = Some(Mutex::new(writer));
        self
    }

    /// Issue one chat completion. Replay backends are keyed by fingerprint;
    /// the live backend retries transient transport errors with exponential
    /// backoff (0.5s/1s/2s by default).
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let fp = fingerprint(request);
        let response = match &self.backend {
            Backend::Replay(cassette) => match cassette.get(&fp) {
                Some(response) => response.clone(),
                None => {
                    let last = request.messages.last();
                    return Err(GatewayError::ReplayMiss {
                        role: last
                            .map(|m| m.role.as_str().to_string())
                            .unwrap_or_default(),
                        preview: last
                            .map(|m| m.content.chars().take(40).collect::<String>())
                            .unwrap_or_default(),
                    });
                }
            },
            Backend::Scripted(queue) => {
                let mut queue = queue.lock().expect("scripted queue poisoned");
                let remaining = queue.len();
                match queue.pop_front() {
                    Some(mut response) => {
                        if response.usage.estimated {
                            let prompt_chars: usize =
                                request.messages.iter().map(|m| m.content.len()).sum();
                            response.usage =
                                TokenUsage::estimate(prompt_chars, response.content.len());
                        }
                        response
                    }
                    None => return Err(GatewayError::ScriptExhausted(remaining)),
                }
            }
            Backend::Live { config, agent } => self.complete_live(config, agent, request)?,
        };
        if let Some(recorder) = &self.recorder {
            recorder
                .lock()
                .expect("cassette writer poisoned")
                .append(&fp, &response)?;
        }
        Ok(response)
    }

    fn complete_live(
        &self,
        config: &LiveConfig,
        agent: &ureq::Agent,
        request: &ChatRequest,
    ) -> Result<ChatResponse, GatewayError> {
        if config.api_key.trim().is_empty() {
            return Err(GatewayError::Auth(format!(
                "no API key configured; set {API_KEY_ENV}"
            )));
        }
        let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        let mut body = json!({
            "model": request.model_name,
            "messages": request.messages.iter().map(|m| json!({
                "role": m.role.as_str(),
                "content": m.content,
            })).collect::<Vec<_>>(),
            "temperature": request.temperature,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let payload = serde_json::to_string(&body).expect("request serialization cannot fail");

        let mut last_error = String::new();
        let attempts = config.max_retries.max(1);
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = std::time::Duration::from_millis(500 * (1 << (attempt - 1)));
                std::thread::sleep(backoff);
            }
            let result = agent
                .post(&url)
                .header("Authorization", &format!("Bearer {}", config.api_key))
                .header("Content-Type", "application/json")
                .send(payload.as_str());
            match result {
                Ok(mut response) => {
                    let text = response.body_mut().read_to_string().map_err(|e| {
                        GatewayError::Transport {
                            attempts: attempt + 1,
                            message: e.to_string(),
                        }
                    })?;
                    return parse_completion_body(&text, request);
                }
                Err(ureq::Error::StatusCode(code)) if code == 401 || code == 403 => {
                    return Err(GatewayError::Auth(format!("provider returned HTTP {code}")));
                }
                Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                    last_error = format!("HTTP {code}");
                }
                Err(ureq::Error::StatusCode(code)) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt + 1,
                        message: format!("HTTP {code}"),
                    });
                }
                Err(e) => {
                    last_error = e.to_string();
                }
            }
        }
        Err(GatewayError::Transport {
            attempts,
            message: last_error,
        })
    }
}

fn parse_completion_body(text: &str, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    let value: Value = serde_json::from_str(text).map_err(|e| GatewayError::Transport {
        attempts: 1,
        message: format!("unparseable completion body: {e}"),
    })?;
    let content = value["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| GatewayError::Transport {
            attempts: 1,
            message: "completion body has no choices[0].message.content".into(),
        })?
        .to_string();
    let usage = match (
        value["usage"]["prompt_tokens"].as_u64(),
        value["usage"]["completion_tokens"].as_u64(),
    ) {
        (Some(prompt_tokens), Some(completion_tokens)) => TokenUsage {
            prompt_tokens,
            completion_tokens,
            estimated: false,
        },
        _ => {
            let prompt_chars: usize = request.messages.iter().map(|m| m.content.len()).sum();
            TokenUsage::estimate(prompt_chars, content.len())
        }
    };
    Ok(ChatResponse { content, usage })
}

/// Fingerprint of a request: SHA-256 over the model name and each message's
/// role and whitespace-collapsed content. Temperature and seed are excluded
/// so fixtures recorded at any temperature serve deterministic replays.
pub fn fingerprint(request: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(request.model_name.as_bytes());
    hasher.update([0u8]);
    for message in &request.messages {
        hasher.update(message.role.as_str().as_bytes());
        hasher.update([1u8]);
        hasher.update(collapse_whitespace(&message.content).as_bytes());
        hasher.update([2u8]);
    }
    hex::encode(hasher.finalize())
}

fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_ws = false;
    for c in text.chars() {
        if c.is_whitespace() {
            if !in_ws {
                out.push(' ');
                in_ws = true;
            }
        } else {
            out.push(c);
            in_ws = false;
        }
    }
    out.trim().to_string()
}

#[derive(Debug, thiserror::Error)]
#[error("no JSON value found in reply")]
pub struct NoJsonFound;

/// Extract a JSON value from model output: the first well-formed fenced
/// ```json block, else the largest brace-balanced substring. One repair pass
/// removes trailing commas before `}` or `]`.
pub fn extract_json_block(text: &str) -> Result<Value, NoJsonFound> {
    let mut rest = text;
    while let Some(start) = rest.find("```json") {
        let after = &rest[start + 7..];
        if let Some(end) = after.find("```") {
            if let Some(value) = parse_with_repair(&after[..end]) {
                return Ok(value);
            }
            rest = &after[end + 3..];
        } else {
            break;
        }
    }
    // No parseable fenced block: take the largest brace-balanced substring.
    let mut candidates: Vec<&str> = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' || bytes[i] == b'[' {
            if let Some(end) = find_balanced_end(text, i) {
                candidates.push(&text[i..=end]);
                i = end + 1;
                continue;
            }
        }
        i += 1;
    }
    candidates.sort_by_key(|c| std::cmp::Reverse(c.len()));
    for candidate in candidates {
        if let Some(value) = parse_with_repair(candidate) {
            return Ok(value);
        }
    }
    Err(NoJsonFound)
}

fn parse_with_repair(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return None;
    }
    if let Ok(value) = serde_json::from_str(trimmed) {
        return Some(value);
    }
    serde_json::from_str(&strip_trailing_commas(trimmed)).ok()
}

/// Single pass removing `,` immediately preceding `}` or `]`, outside strings.
fn strip_trailing_commas(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                out.push(c);
            }
            ',' => {
                let next_significant = chars[i + 1..].iter().find(|c| !c.is_whitespace());
                if matches!(next_significant, Some('}') | Some(']')) {
                    continue;
                }
                out.push(c);
            }
            _ => out.push(c),
        }
    }
    out
}

fn find_balanced_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let open = bytes[start];
    let close = if open == b'{' { b'}' } else { b']' };
    let mut depth = 0i32;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b if b == open => depth += 1,
            b if b == close => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Exact usage sums over stage-labeled records. The totals are flagged
/// estimated when any contributing record was estimated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated: bool,
    pub by_stage: BTreeMap<String, StageUsage>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageUsage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub fn usage_totals<'a, I>(records: I) -> UsageTotals
where
    I: IntoIterator<Item = (&'a str, TokenUsage)>,
{
    let mut totals = UsageTotals::default();
    for (stage, usage) in records {
        totals.calls += 1;
        totals.prompt_tokens += usage.prompt_tokens;
        totals.completion_tokens += usage.completion_tokens;
        totals.estimated |= usage.estimated;
        let entry = totals.by_stage.entry(stage.to_string()).or_default();
        entry.calls += 1;
        entry.prompt_tokens += usage.prompt_tokens;
        entry.completion_tokens += usage.completion_tokens;
    }
    totals
}
