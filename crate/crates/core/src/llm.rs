//! Completion backends and prompt templating.
//!
//! Every pipeline talks to a [`Backend`]. Two implementations ship here:
//! [`RemoteBackend`] speaks the common chat-completions HTTP shape and
//! [`MockBackend`] answers from an ordered rule list, recording a transcript
//! that golden tests compare byte for byte.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;
use thiserror::Error;

pub const API_KEY_ENV: &str = "LITPILOT_API_KEY";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("missing slot {0:?}")]
    MissingSlot(String),
    #[error("unknown slot {0:?}")]
    UnknownSlot(String),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    TransportFailure(String),
    #[error("backend rejected the request with status {status}: {body}")]
    BackendRejected { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unparseable backend response: {0}")]
    MalformedResponse(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

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
            Self::System => "system",
            Self::User => "user",
            Self::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stream: bool,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: 0.0,
            max_tokens: 1024,
            stream: false,
        }
    }

    /// Single user turn.
    pub fn user(prompt: impl Into<String>) -> Self {
        Self::new(vec![ChatMessage::new(Role::User, prompt)])
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let invalid = |m: &str| Err(BackendError::InvalidRequest(m.to_string()));
        match self.messages.first() {
            None => return invalid("no messages"),
            Some(m) if m.role == Role::Assistant => return invalid("first message must be system or user"),
            _ => {}
        }
        if self
            .messages
            .iter()
            .any(|m| m.role != Role::System && m.content.trim().is_empty())
        {
            return invalid("empty user or assistant message");
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return invalid("temperature must be >= 0");
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be > 0");
        }
        Ok(())
    }

    /// Message contents joined by blank lines; what mock rules match against.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    pub finish: FinishReason,
    pub tokens_in: u32,
    pub tokens_out: u32,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError>;

    /// Streams increments through `on_delta`; their concatenation equals the
    /// returned content.
    fn complete_streaming(
        &self,
        request: &ChatRequest,
        on_delta: &mut dyn FnMut(&str),
    ) -> Result<Completion, BackendError> {
        let completion = self.complete(request)?;
        if !completion.content.is_empty() {
            on_delta(&completion.content);
        }
        Ok(completion)
    }
}

/// Splits text into word-sized increments (each keeps its trailing space).
pub fn stream_increments(text: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut prev_space = false;
    for (i, c) in text.char_indices() {
        let space = c.is_whitespace();
        if prev_space && !space && i > start {
            pieces.push(&text[start..i]);
            start = i;
        }
        prev_space = space;
    }
    if start < text.len() {
        pieces.push(&text[start..]);
    }
    pieces
}

fn token_count(text: &str) -> u32 {
    u32::try_from(crate::text::count_tokens(text)).unwrap_or(u32::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Exact,
    Contains,
    Regex,
}

/// One scripted reply. Serialized as `{match, pattern, response}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub kind: MatchKind,
    pub pattern: String,
    pub response: String,
}

impl MockRule {
    pub fn new(kind: MatchKind, pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            kind,
            pattern: pattern.into(),
            response: response.into(),
        }
    }

    pub fn contains(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self::new(MatchKind::Contains, pattern, response)
    }

    pub fn catch_all(response: impl Into<String>) -> Self {
        Self::new(MatchKind::Contains, "", response)
    }

    fn is_catch_all(&self) -> bool {
        match self.kind {
            MatchKind::Contains => self.pattern.is_empty(),
            MatchKind::Regex => matches!(self.pattern.as_str(), "" | ".*" | "(?s).*" | "^"),
            MatchKind::Exact => false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MockError {
    #[error("rule {index} has an invalid regex: {message}")]
    InvalidPattern { index: usize, message: String },
    #[error("rule list must end with a catch-all rule")]
    MissingCatchAll,
    #[error("cannot read rules file: {0}")]
    Io(String),
    #[error("cannot parse rules file: {0}")]
    Parse(String),
}

struct CompiledRule {
    rule: MockRule,
    regex: Option<Regex>,
}

impl CompiledRule {
    fn matches(&self, prompt: &str) -> bool {
        match self.rule.kind {
            MatchKind::Exact => prompt == self.rule.pattern,
            MatchKind::Contains => prompt.contains(&self.rule.pattern),
            MatchKind::Regex => self.regex.as_ref().is_some_and(|r| r.is_match(prompt)),
        }
    }
}

enum MockMode {
    Scripted(Vec<CompiledRule>),
    Echo,
    Unavailable,
}

/// One recorded exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: Vec<ChatMessage>,
    pub response: Result<String, String>,
}

/// Deterministic scripted backend: the first matching rule answers.
pub struct MockBackend {
    mode: MockMode,
    transcript: Mutex<Vec<TranscriptEntry>>,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Result<Self, MockError> {
        if !rules.last().is_some_and(MockRule::is_catch_all) {
            return Err(MockError::MissingCatchAll);
        }
        let compiled = rules
            .into_iter()
            .enumerate()
            .map(|(index, rule)| {
                let regex = match rule.kind {
                    MatchKind::Regex => Some(Regex::new(&rule.pattern).map_err(|e| MockError::InvalidPattern {
                        index,
                        message: e.to_string(),
                    })?),
                    _ => None,
                };
                Ok(CompiledRule { rule, regex })
            })
            .collect::<Result<Vec<_>, MockError>>()?;
        Ok(Self::with_mode(MockMode::Scripted(compiled)))
    }

    /// Single catch-all rule.
    pub fn fixed(response: impl Into<String>) -> Self {
        Self::new(vec![MockRule::catch_all(response)]).expect("catch-all rule list is valid")
    }

    /// Replies with the prompt text itself.
    pub fn echo() -> Self {
        Self::with_mode(MockMode::Echo)
    }

    /// Fails every request with a transport error, as a downed backend would.
    pub fn unavailable() -> Self {
        Self::with_mode(MockMode::Unavailable)
    }

    fn with_mode(mode: MockMode) -> Self {
        Self {
            mode,
            transcript: Mutex::new(Vec::new()),
        }
    }

    /// Loads a JSON list of `{match, pattern, response}` objects.
    pub fn from_rules_file(path: &Path) -> Result<Self, MockError> {
        let raw = std::fs::read_to_string(path).map_err(|e| MockError::Io(format!("{}: {e}", path.display())))?;
        let rules: Vec<MockRule> = serde_json::from_str(&raw).map_err(|e| MockError::Parse(e.to_string()))?;
        Self::new(rules)
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    pub fn call_count(&self) -> usize {
        self.transcript.lock().expect("transcript lock").len()
    }

    pub fn clear_transcript(&self) {
        self.transcript.lock().expect("transcript lock").clear();
    }

    /// Human-readable transcript for golden files.
    pub fn transcript_text(&self) -> String {
        let mut out = String::new();
        for (i, entry) in self.transcript().iter().enumerate() {
            out.push_str(&format!("=== exchange {} ===\n", i + 1));
            for m in &entry.request {
                out.push_str(&format!("[{}]\n{}\n", m.role.as_str(), m.content));
            }
            match &entry.response {
                Ok(r) => out.push_str(&format!("--- response ---\n{r}\n")),
                Err(e) => out.push_str(&format!("--- error ---\n{e}\n")),
            }
        }
        out
    }

    fn reply(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let prompt = request.prompt_text();
        match &self.mode {
            MockMode::Scripted(rules) => Ok(rules
                .iter()
                .find(|r| r.matches(&prompt))
                .map(|r| r.rule.response.clone())
                .expect("terminal catch-all always matches")),
            MockMode::Echo => Ok(prompt),
            MockMode::Unavailable => Err(BackendError::TransportFailure("mock backend unavailable".into())),
        }
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        request.validate()?;
        // Hold the lock across reply + record so concurrent callers keep
        // request order and transcript order in agreement.
        let mut log = self.transcript.lock().expect("transcript lock");
        let reply = self.reply(request);
        log.push(TranscriptEntry {
            request: request.messages.clone(),
            response: reply.clone().map_err(|e| e.to_string()),
        });
        let content = reply?;
        Ok(Completion {
            tokens_in: token_count(&request.prompt_text()),
            tokens_out: token_count(&content),
            content,
            finish: FinishReason::Stop,
        })
    }

    fn complete_streaming(
        &self,
        request: &ChatRequest,
        on_delta: &mut dyn FnMut(&str),
    ) -> Result<Completion, BackendError> {
        let completion = self.complete(request)?;
        for piece in stream_increments(&completion.content) {
            on_delta(piece);
        }
        Ok(completion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
}

fn default_timeout_secs() -> f64 {
    30.0
}

/// Chat-completions client: `POST {base_url}/chat/completions`.
pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
}

impl RemoteBackend {
    /// Reads the bearer token from `LITPILOT_API_KEY` when set.
    pub fn new(config: RemoteConfig) -> Self {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self { config, api_key }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, request: &ChatRequest, stream: bool) -> serde_json::Value {
        serde_json::json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "stream": stream,
        })
    }

    fn send(&self, request: &ChatRequest, stream: bool) -> Result<reqwest::blocking::Response, BackendError> {
        // Built per call: a blocking client must not be dropped inside an
        // async runtime, and backends are shared with the HTTP service.
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(self.config.timeout_secs))
            .build()
            .map_err(|e| BackendError::TransportFailure(e.to_string()))?;
        let mut attempt = 0;
        loop {
            let mut builder = client.post(self.endpoint()).json(&self.body(request, stream));
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            match builder.send() {
                Ok(resp) if resp.status().is_success() => return Ok(resp),
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let body = resp.text().unwrap_or_default();
                    return Err(BackendError::BackendRejected { status, body });
                }
                Err(e) if e.is_timeout() => return Err(BackendError::Timeout),
                Err(e) if attempt == 0 => {
                    tracing::warn!(error = %e, "transport failure, retrying once");
                    attempt += 1;
                }
                Err(e) => return Err(BackendError::TransportFailure(e.to_string())),
            }
        }
    }
}

fn map_finish(reason: Option<&str>) -> FinishReason {
    match reason {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Error,
    }
}

fn usage_field(v: &serde_json::Value, key: &str) -> Option<u32> {
    v.get("usage")?.get(key)?.as_u64().and_then(|n| u32::try_from(n).ok())
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        request.validate()?;
        let resp = self.send(request, false)?;
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::TransportFailure(e.to_string())
            }
        })?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let choice = v
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| BackendError::MalformedResponse("no choices".into()))?;
        let content = choice
            .get("message")
            .and_then(|m| m.get("content"))
            .and_then(|c| c.as_str())
            .ok_or_else(|| BackendError::MalformedResponse("no message content".into()))?
            .to_string();
        Ok(Completion {
            finish: map_finish(choice.get("finish_reason").and_then(|f| f.as_str())),
            tokens_in: usage_field(&v, "prompt_tokens").unwrap_or_else(|| token_count(&request.prompt_text())),
            tokens_out: usage_field(&v, "completion_tokens").unwrap_or_else(|| token_count(&content)),
            content,
        })
    }

    /// Reads server-sent `data: {json}` lines until `data: [DONE]`.
    fn complete_streaming(
        &self,
        request: &ChatRequest,
        on_delta: &mut dyn FnMut(&str),
    ) -> Result<Completion, BackendError> {
        request.validate()?;
        let resp = self.send(request, true)?;
        let mut content = String::new();
        let mut finish = FinishReason::Stop;
        for line in BufReader::new(resp).lines() {
            let line = line.map_err(|e| BackendError::TransportFailure(e.to_string()))?;
            let Some(data) = line.strip_prefix("data:") else {
                continue;
            };
            let data = data.trim();
            if data == "[DONE]" {
                break;
            }
            let v: serde_json::Value =
                serde_json::from_str(data).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
            let choice = v.get("choices").and_then(|c| c.get(0));
            if let Some(delta) = choice
                .and_then(|c| c.get("delta"))
                .and_then(|d| d.get("content"))
                .and_then(|c| c.as_str())
            {
                if !delta.is_empty() {
                    on_delta(delta);
                    content.push_str(delta);
                }
            }
            if let Some(reason) = choice.and_then(|c| c.get("finish_reason")).and_then(|f| f.as_str()) {
                finish = map_finish(Some(reason));
            }
        }
        Ok(Completion {
            finish,
            tokens_in: token_count(&request.prompt_text()),
            tokens_out: token_count(&content),
            content,
        })
    }
}

/// A prompt with `{slot}` placeholders and optional few-shot exemplars.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub exemplars: Vec<(String, String)>,
    slots: Vec<String>,
}

fn is_slot_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_slot_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Splits a body into literal text and slot names.
fn scan_placeholders(body: &str) -> Vec<Result<&str, &str>> {
    let mut parts = Vec::new();
    let mut literal_start = 0;
    let mut i = 0;
    let bytes = body.as_bytes();
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let name_start = i + 1;
            let mut j = name_start;
            while j < bytes.len() && is_slot_char(bytes[j] as char) {
                j += 1;
            }
            if j > name_start && j < bytes.len() && bytes[j] == b'}' && is_slot_start(bytes[name_start] as char) {
                if literal_start < i {
                    parts.push(Ok(&body[literal_start..i]));
                }
                parts.push(Err(&body[name_start..j]));
                i = j + 1;
                literal_start = i;
                continue;
            }
        }
        i += 1;
    }
    if literal_start < body.len() {
        parts.push(Ok(&body[literal_start..]));
    }
    parts
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>, exemplars: Vec<(String, String)>) -> Self {
        let body = body.into();
        let mut slots: Vec<String> = Vec::new();
        for part in scan_placeholders(&body) {
            if let Err(name) = part {
                if !slots.iter().any(|s| s == name) {
                    slots.push(name.to_string());
                }
            }
        }
        Self {
            name: name.into(),
            body,
            exemplars,
            slots,
        }
    }

    /// Parses a prompt asset file. Optional `### example input` /
    /// `### example output` pairs precede a `### template` section; a file
    /// without markers is all body.
    pub fn parse_asset(name: &str, raw: &str) -> Self {
        #[derive(PartialEq)]
        enum Part {
            Input,
            Output,
            Body,
        }
        if !raw.lines().any(|l| l.trim() == "### template") {
            return Self::new(name, raw.trim_matches('\n'), Vec::new());
        }
        let mut exemplars = Vec::new();
        let mut pending_input: Option<String> = None;
        let mut body = String::new();
        let mut current: Option<(Part, Vec<&str>)> = None;
        let mut flush = |cur: Option<(Part, Vec<&str>)>, pending: &mut Option<String>, body: &mut String| {
            if let Some((part, lines)) = cur {
                let text = lines.join("\n").trim_matches('\n').to_string();
                match part {
                    Part::Input => *pending = Some(text),
                    Part::Output => exemplars.push((pending.take().unwrap_or_default(), text)),
                    Part::Body => *body = text,
                }
            }
        };
        for line in raw.lines() {
            let marker = match line.trim() {
                "### example input" => Some(Part::Input),
                "### example output" => Some(Part::Output),
                "### template" => Some(Part::Body),
                _ => None,
            };
            match marker {
                Some(part) => {
                    flush(current.take(), &mut pending_input, &mut body);
                    current = Some((part, Vec::new()));
                }
                None => {
                    if let Some((_, lines)) = current.as_mut() {
                        lines.push(line);
                    }
                }
            }
        }
        flush(current.take(), &mut pending_input, &mut body);
        Self::new(name, body, exemplars)
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    /// Exemplar blocks in order, then the body with every placeholder
    /// replaced verbatim. Substituted text is never rescanned.
    pub fn render<'a>(&self, slots: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<String, TemplateError> {
        let values: BTreeMap<&str, &str> = slots.into_iter().collect();
        if let Some(unknown) = values.keys().find(|k| !self.slots.iter().any(|s| s == *k)) {
            return Err(TemplateError::UnknownSlot(unknown.to_string()));
        }
        if let Some(missing) = self.slots.iter().find(|s| !values.contains_key(s.as_str())) {
            return Err(TemplateError::MissingSlot(missing.clone()));
        }
        let mut out = String::new();
        for (input, output) in &self.exemplars {
            out.push_str(&format!("Example input: {input}\nExample output: {output}\n\n"));
        }
        for part in scan_placeholders(&self.body) {
            match part {
                Ok(lit) => out.push_str(lit),
                Err(name) => out.push_str(values[name]),
            }
        }
        Ok(out)
    }
}

/// Named prompt templates, loaded from the versioned asset directory.
#[derive(Debug, Clone, Default)]
pub struct PromptLibrary {
    templates: BTreeMap<String, PromptTemplate>,
}

macro_rules! builtin_assets {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../prompts/v1/", $name, ".txt")))),*]
    };
}

const BUILTIN_ASSETS: &[(&str, &str)] = builtin_assets!(
    "area_label",
    "compare_summary",
    "extract_contrib",
    "polish",
    "query_rewrite",
    "read_answer",
    "review_conclusion",
    "review_intro",
    "review_section",
    "route",
    "topic_summary",
    "translate",
    "triple_question",
);

impl PromptLibrary {
    /// The assets under `prompts/v1`, compiled in.
    pub fn builtin() -> Self {
        let templates = BUILTIN_ASSETS
            .iter()
            .map(|(name, raw)| (name.to_string(), PromptTemplate::parse_asset(name, raw)))
            .collect();
        Self { templates }
    }

    /// Built-ins overridden by any `<name>.txt` files in `dir`.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut lib = Self::builtin();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let raw = std::fs::read_to_string(&path)?;
            lib.insert(PromptTemplate::parse_asset(name, &raw));
        }
        Ok(lib)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(name)
            .ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))
    }

    pub fn render<'a>(
        &self,
        name: &str,
        slots: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<String, TemplateError> {
        self.get(name)?.render(slots)
    }
}
