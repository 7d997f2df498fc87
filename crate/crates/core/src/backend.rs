//! Pluggable translation of tagged sentences.
//!
//! [`Translator`] is the contract the projection pipeline drives. The
//! deterministic mocks ([`IdentityBackend`], [`ScrambleBackend`],
//! [`FaultyBackend`], [`ScriptedBackend`]) make every pipeline path testable
//! offline; [`HttpBackend`] talks to a completions- or chat-style inference
//! endpoint.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dataset::substitute;
use crate::tagging::{segments, Segment};

pub const DEFAULT_API_KEY_ENV: &str = "SLOTPROJ_API_KEY";

pub const DEFAULT_PROMPT_TEMPLATE: &str = "Translate the following sentence from {src} to {tgt}, keeping all <x> tags exactly paired around the corresponding words.\n{text}\n";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("unsupported locale {0}")]
    UnsupportedLocale(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("prompt template is missing the {{{0}}} placeholder")]
    MissingPlaceholder(&'static str),
}

impl BackendError {
    /// Transport-level retry may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::RateLimited { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

/// Per-attempt decoding parameters: temperature rises by `temperature_step`
/// on every feedback-loop retry, up to `max_temperature`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeSchedule {
    pub base_temperature: f64,
    pub temperature_step: f64,
    pub max_temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for DecodeSchedule {
    fn default() -> Self {
        DecodeSchedule {
            base_temperature: 0.0,
            temperature_step: 0.3,
            max_temperature: 1.0,
            max_tokens: 256,
            seed: None,
        }
    }
}

impl DecodeSchedule {
    pub fn params_for_attempt(&self, attempt: u32) -> DecodeParams {
        let raised = self.base_temperature + f64::from(attempt.saturating_sub(1)) * self.temperature_step;
        DecodeParams {
            temperature: raised.min(self.max_temperature).max(0.0),
            max_tokens: self.max_tokens,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRequest {
    pub tagged_text: String,
    pub source_locale: String,
    pub target_locale: String,
    /// 1-based feedback-loop attempt number.
    pub attempt: u32,
    pub decode_params: DecodeParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationResult {
    pub text: String,
    pub raw: String,
    pub latency_ms: u64,
}

impl TranslationResult {
    fn local(text: String) -> Self {
        TranslationResult {
            raw: text.clone(),
            text,
            latency_ms: 0,
        }
    }
}

/// A translation backend. Implementations must be safe to call from several
/// workers at once.
pub trait Translator: Send + Sync {
    fn translate(&self, req: &TranslationRequest) -> Result<TranslationResult, BackendError>;

    /// Upper bound on concurrent `translate` calls the pipeline should issue.
    fn max_concurrent(&self) -> usize {
        1
    }
}

impl<T: Translator + ?Sized> Translator for Box<T> {
    fn translate(&self, req: &TranslationRequest) -> Result<TranslationResult, BackendError> {
        (**self).translate(req)
    }

    fn max_concurrent(&self) -> usize {
        (**self).max_concurrent()
    }
}

/// Substitutes `{src}`, `{tgt}` and `{text}` into `template`.
pub fn build_prompt(template: &str, req: &TranslationRequest) -> Result<String, BackendError> {
    for name in ["src", "tgt", "text"] {
        if !template.contains(&format!("{{{name}}}")) {
            return Err(BackendError::MissingPlaceholder(name));
        }
    }
    Ok(substitute(
        template,
        &[
            ("src", &req.source_locale),
            ("tgt", &req.target_locale),
            ("text", &req.tagged_text),
        ],
    ))
}

/// Returns the input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityBackend;

impl Translator for IdentityBackend {
    fn translate(&self, req: &TranslationRequest) -> Result<TranslationResult, BackendError> {
        Ok(TranslationResult::local(req.tagged_text.clone()))
    }
}

/// Reverses the order of words and tagged spans, keeping each span's inner
/// word order and markers intact.
#[derive(Debug, Clone, Copy)]
pub struct ScrambleBackend {
    pub seed: u64,
}

impl ScrambleBackend {
    pub fn new(seed: u64) -> Self {
        ScrambleBackend { seed }
    }

    pub fn scramble(text: &str) -> String {
        let mut units: Vec<String> = Vec::new();
        let mut open: Option<(&str, Vec<String>)> = None;
        for segment in segments(text) {
            match (segment, open.as_mut()) {
                (Segment::Text(t), Some((_, words))) => words.extend(t.split_whitespace().map(String::from)),
                (Segment::Text(t), None) => units.extend(t.split_whitespace().map(String::from)),
                (Segment::Marker(tag), Some((outer, words))) if *outer == tag => {
                    units.push(format!("<{tag}> {} <{tag}>", words.join(" ")).replace("  ", " "));
                    open = None;
                }
                (Segment::Marker(tag), Some((_, words))) => words.push(format!("<{tag}>")),
                (Segment::Marker(tag), None) => open = Some((tag, Vec::new())),
            }
        }
        if let Some((tag, words)) = open {
            units.push(format!("<{tag}>"));
            units.extend(words);
        }
        units.reverse();
        units.join(" ")
    }
}

impl Translator for ScrambleBackend {
    fn translate(&self, req: &TranslationRequest) -> Result<TranslationResult, BackendError> {
        Ok(TranslationResult::local(Self::scramble(&req.tagged_text)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    DropLast,
    DuplicateLast,
    /// Drop or duplicate, by a fair coin.
    Either,
}

impl std::str::FromStr for FaultKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drop_last" | "drop-last" => Ok(FaultKind::DropLast),
            "duplicate_last" | "duplicate-last" => Ok(FaultKind::DuplicateLast),
            "either" => Ok(FaultKind::Either),
            other => Err(format!("unknown fault kind {other:?} (expected drop-last, duplicate-last or either)")),
        }
    }
}

/// With probability `p` per call, corrupts the last marker; otherwise acts as
/// identity. A faulty call on marker-free text returns an empty string.
///
/// Decisions are a pure function of `(seed, tagged_text, attempt)`.
#[derive(Debug, Clone, Copy)]
pub struct FaultyBackend {
    pub probability: f64,
    pub seed: u64,
    pub kind: FaultKind,
}

impl FaultyBackend {
    pub fn new(probability: f64, seed: u64) -> Self {
        FaultyBackend {
            probability,
            seed,
            kind: FaultKind::DropLast,
        }
    }

    pub fn with_kind(mut self, kind: FaultKind) -> Self {
        self.kind = kind;
        self
    }

    fn rng(&self, req: &TranslationRequest) -> ChaCha8Rng {
        let mut h = fnv1a(FNV_OFFSET, &self.seed.to_le_bytes());
        h = fnv1a(h, req.tagged_text.as_bytes());
        h = fnv1a(h, &req.attempt.to_le_bytes());
        ChaCha8Rng::seed_from_u64(h)
    }

    pub fn corrupt(text: &str, duplicate: bool) -> String {
        let Some((start, end)) = last_marker(text) else {
            return String::new();
        };
        let marker = &text[start..end];
        let corrupted = if duplicate {
            format!("{} {marker}{}", &text[..end], &text[end..])
        } else {
            format!("{}{}", &text[..start], &text[end..])
        };
        corrupted.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

fn last_marker(text: &str) -> Option<(usize, usize)> {
    let mut offset = 0;
    let mut last = None;
    for segment in segments(text) {
        let len = match segment {
            Segment::Text(t) => t.len(),
            Segment::Marker(tag) => {
                last = Some((offset, offset + tag.len() + 2));
                tag.len() + 2
            }
        };
        offset += len;
    }
    last
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

impl Translator for FaultyBackend {
    fn translate(&self, req: &TranslationRequest) -> Result<TranslationResult, BackendError> {
        let mut rng = self.rng(req);
        let faulty = rng.random::<f64>() < self.probability;
        if !faulty {
            return Ok(TranslationResult::local(req.tagged_text.clone()));
        }
        let duplicate = match self.kind {
            FaultKind::DropLast => false,
            FaultKind::DuplicateLast => true,
            FaultKind::Either => rng.random::<bool>(),
        };
        Ok(TranslationResult::local(Self::corrupt(&req.tagged_text, duplicate)))
    }
}

/// Delegates attempt `n` to `schedule[n - 1]`, and to `fallback` once the
/// schedule runs out.
pub struct ScriptedBackend {
    schedule: Vec<Box<dyn Translator>>,
    fallback: Box<dyn Translator>,
}

impl ScriptedBackend {
    pub fn new(schedule: Vec<Box<dyn Translator>>, fallback: Box<dyn Translator>) -> Self {
        ScriptedBackend { schedule, fallback }
    }
}

impl Translator for ScriptedBackend {
    fn translate(&self, req: &TranslationRequest) -> Result<TranslationResult, BackendError> {
        let index = req.attempt.saturating_sub(1) as usize;
        match self.schedule.get(index) {
            Some(backend) => backend.translate(req),
            None => self.fallback.translate(req),
        }
    }

    fn max_concurrent(&self) -> usize {
        self.fallback.max_concurrent()
    }
}

/// Adds a fixed delay before each call to `inner`; lets mock runs be slow
/// enough to interrupt.
pub struct DelayedBackend<T> {
    inner: T,
    delay: Duration,
    workers: usize,
}

impl<T: Translator> DelayedBackend<T> {
    pub fn new(inner: T, delay: Duration, workers: usize) -> Self {
        DelayedBackend {
            inner,
            delay,
            workers: workers.max(1),
        }
    }
}

impl<T: Translator> Translator for DelayedBackend<T> {
    fn translate(&self, req: &TranslationRequest) -> Result<TranslationResult, BackendError> {
        std::thread::sleep(self.delay);
        self.inner.translate(req)
    }

    fn max_concurrent(&self) -> usize {
        self.workers
    }
}

/// Request/response field layout of the inference endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EndpointDialect {
    /// `{prompt}` in, `choices[0].text` out.
    #[default]
    Completions,
    /// `{messages}` in, `choices[0].message.content` out.
    Chat,
}

impl std::str::FromStr for EndpointDialect {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "completions" => Ok(EndpointDialect::Completions),
            "chat" => Ok(EndpointDialect::Chat),
            other => Err(format!("unknown endpoint dialect {other:?} (expected completions or chat)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    pub prompt_template: String,
    pub dialect: EndpointDialect,
    pub timeout: Duration,
    pub max_concurrent: usize,
    /// Environment variable holding the bearer token; `None` sends no header.
    pub api_key_env: Option<String>,
    /// Transport-level retries for rate limits and connection failures.
    /// These never count as feedback-loop attempts.
    pub transport_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    /// Empty means every locale is accepted.
    pub supported_locales: Vec<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "http://127.0.0.1:8000/v1/completions".into(),
            model: "default".into(),
            prompt_template: DEFAULT_PROMPT_TEMPLATE.into(),
            dialect: EndpointDialect::Completions,
            timeout: Duration::from_secs(60),
            max_concurrent: 4,
            api_key_env: Some(DEFAULT_API_KEY_ENV.into()),
            transport_retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            supported_locales: Vec::new(),
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.available.notify_one();
    }
}

pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    in_flight: Semaphore,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = Semaphore::new(config.max_concurrent.max(1));
        HttpBackend {
            config,
            agent,
            in_flight,
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn request_body(&self, prompt: &str, params: &DecodeParams) -> Value {
        let mut body = match self.config.dialect {
            EndpointDialect::Completions => json!({
                "model": self.config.model,
                "prompt": prompt,
                "temperature": params.temperature,
                "max_tokens": params.max_tokens,
            }),
            EndpointDialect::Chat => json!({
                "model": self.config.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": params.temperature,
                "max_tokens": params.max_tokens,
            }),
        };
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn extract_text(&self, body: &str, prompt: &str) -> Result<String, BackendError> {
        let value: Value =
            serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let first = value
            .get("choices")
            .and_then(Value::as_array)
            .and_then(|c| c.first())
            .ok_or_else(|| BackendError::MalformedResponse("no choices".into()))?;
        let text = match self.config.dialect {
            EndpointDialect::Completions => first.get("text"),
            EndpointDialect::Chat => first.get("message").and_then(|m| m.get("content")),
        }
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::MalformedResponse("candidate has no text".into()))?;
        let text = text.strip_prefix(prompt).unwrap_or(text);
        Ok(text.trim().to_string())
    }

    fn send_once(&self, prompt: &str, params: &DecodeParams) -> Result<(String, String), BackendError> {
        let mut request = self.agent.post(&self.config.endpoint);
        if let Some(var) = &self.config.api_key_env {
            let key = std::env::var(var).map_err(|_| BackendError::MissingCredential(var.clone()))?;
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let _permit = self.in_flight.acquire();
        let mut response = request
            .send_json(self.request_body(prompt, params))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => {
                let text = self.extract_text(&body, prompt)?;
                Ok((text, body))
            }
            429 => Err(BackendError::RateLimited { retry_after }),
            500..=599 => Err(BackendError::Transport(format!("HTTP {status}"))),
            _ => Err(BackendError::Status { status, body }),
        }
    }
}

impl Translator for HttpBackend {
    fn translate(&self, req: &TranslationRequest) -> Result<TranslationResult, BackendError> {
        if !self.config.supported_locales.is_empty()
            && !self.config.supported_locales.iter().any(|l| *l == req.target_locale)
        {
            return Err(BackendError::UnsupportedLocale(req.target_locale.clone()));
        }
        let prompt = build_prompt(&self.config.prompt_template, req)?;
        let started = Instant::now();
        let mut backoff = self.config.initial_backoff;
        let mut retries = 0;
        loop {
            match self.send_once(&prompt, &req.decode_params) {
                Ok((text, raw)) => {
                    return Ok(TranslationResult {
                        text,
                        raw,
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Err(err) if err.is_retryable() && retries < self.config.transport_retries => {
                    let wait = match &err {
                        BackendError::RateLimited {
                            retry_after: Some(after),
                        } => (*after).max(backoff),
                        _ => backoff,
                    };
                    log::warn!("transport retry {} after {err}; waiting {wait:?}", retries + 1);
                    std::thread::sleep(wait);
                    backoff = (backoff * 2).min(self.config.max_backoff);
                    retries += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }

    fn max_concurrent(&self) -> usize {
        self.config.max_concurrent.max(1)
    }
}
