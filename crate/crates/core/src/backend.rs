//! Completion backends: a chat-completions HTTP client and deterministic
//! mocks.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::promptgen::PromptInstance;
use crate::{jsonl, Error, Result};

/// Environment variable holding the bearer token for the HTTP backend.
pub const API_KEY_ENV: &str = "NBEST_API_KEY";
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("server returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },

    #[error("malformed completion response: {0}")]
    Malformed(String),

    #[error("no scripted response for {0:?}")]
    MissingScripted(String),

    #[error("no reference transcript for {0:?}")]
    MissingReference(String),

    #[error("backend setup failed: {0}")]
    Setup(String),
}

/// Sampling and transport settings.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationParams {
    pub temperature: f64,
    /// Sent as `max_tokens = 2 * words` when set.
    pub max_output_words: Option<usize>,
    pub model_name: String,
    pub request_timeout: Duration,
    pub max_retries: u32,
    /// First retry waits about this long; each further retry doubles it.
    pub backoff_base: Duration,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: DEFAULT_TEMPERATURE,
            max_output_words: None,
            model_name: "default".to_string(),
            request_timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        Ok(())
    }

    /// Upper bound on the sleep before retry number `retry` (0-based).
    pub fn max_backoff(&self, retry: u32) -> Duration {
        self.backoff_base.saturating_mul(2u32.saturating_pow(retry)).mul_f64(1.5)
    }
}

/// Anything that turns a prompt into raw model text.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &PromptInstance, params: &GenerationParams) -> Result<String, BackendError>;

    fn name(&self) -> &'static str;
}

/// Returns the best hypothesis unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityBackend;

impl CompletionBackend for IdentityBackend {
    fn complete(&self, prompt: &PromptInstance, _: &GenerationParams) -> Result<String, BackendError> {
        Ok(prompt.best_hypothesis.clone())
    }

    fn name(&self) -> &'static str {
        "identity"
    }
}

/// Returns the reference transcript of the prompted utterance.
#[derive(Clone, Debug, Default)]
pub struct OracleBackend {
    references: HashMap<String, String>,
}

impl OracleBackend {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        OracleBackend {
            references: corpus
                .utterances()
                .iter()
                .map(|u| (u.utt_id.clone(), u.text.clone()))
                .collect(),
        }
    }
}

impl CompletionBackend for OracleBackend {
    fn complete(&self, prompt: &PromptInstance, _: &GenerationParams) -> Result<String, BackendError> {
        self.references
            .get(&prompt.utt_id)
            .cloned()
            .ok_or_else(|| BackendError::MissingReference(prompt.utt_id.clone()))
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

/// Fixed replies keyed by `utt_id`. Every prompt received is recorded.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    table: HashMap<String, String>,
    received: Mutex<Vec<PromptInstance>>,
}

/// One line of a scripted response file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub utt_id: String,
    pub response: String,
}

impl ScriptedBackend {
    pub fn new(table: HashMap<String, String>) -> Self {
        ScriptedBackend {
            table,
            received: Mutex::new(Vec::new()),
        }
    }

    /// Reads `{"utt_id": ..., "response": ...}` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<(usize, ScriptedResponse)> = jsonl::read(path)?;
        Ok(Self::new(rows.into_iter().map(|(_, r)| (r.utt_id, r.response)).collect()))
    }

    /// Prompts received so far, in arrival order.
    pub fn received(&self) -> Vec<PromptInstance> {
        self.received.lock().expect("poisoned").clone()
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, prompt: &PromptInstance, _: &GenerationParams) -> Result<String, BackendError> {
        self.received.lock().expect("poisoned").push(prompt.clone());
        self.table
            .get(&prompt.utt_id)
            .cloned()
            .ok_or_else(|| BackendError::MissingScripted(prompt.utt_id.clone()))
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}

/// Chat-completions client (`model`, `messages`, `temperature` in; first
/// choice's message content out).
#[derive(Debug)]
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// `endpoint` is the full chat-completions URL. The bearer token is read
    /// from [`API_KEY_ENV`] if set.
    pub fn new(endpoint: impl Into<String>, request_timeout: Duration) -> Result<Self, BackendError> {
        Self::with_api_key(endpoint, std::env::var(API_KEY_ENV).ok(), request_timeout)
    }

    pub fn with_api_key(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        request_timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(request_timeout)
            .build()
            .map_err(|e| BackendError::Setup(e.to_string()))?;
        Ok(HttpBackend {
            endpoint: endpoint.into(),
            api_key,
            client,
        })
    }

    /// JSON body sent for `prompt`.
    pub fn request_body(prompt: &PromptInstance, params: &GenerationParams) -> serde_json::Value {
        let mut body = json!({
            "model": params.model_name,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": params.temperature,
        });
        if let Some(words) = params.max_output_words {
            body["max_tokens"] = json!(words * 2);
        }
        body
    }

    /// Extracts `choices[0].message.content`.
    pub fn parse_response(body: &str) -> Result<String, BackendError> {
        let v: serde_json::Value = serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, Attempt> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_success() {
            return Self::parse_response(&text).map_err(Attempt::Fatal);
        }
        let code = status.as_u16();
        if code == 429 || status.is_server_error() {
            Err(Attempt::RetryStatus(code, text))
        } else {
            Err(Attempt::FatalStatus(code, text))
        }
    }
}

enum Attempt {
    Retry(String),
    RetryStatus(u16, String),
    Fatal(BackendError),
    FatalStatus(u16, String),
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &PromptInstance, params: &GenerationParams) -> Result<String, BackendError> {
        let body = Self::request_body(prompt, params);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let failure = match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::FatalStatus(status, body)) => {
                    return Err(BackendError::Status { status, attempts, body })
                }
                Err(Attempt::Retry(message)) => BackendError::Transport { attempts, message },
                Err(Attempt::RetryStatus(status, body)) => BackendError::Status { status, attempts, body },
            };
            if attempts > params.max_retries {
                return Err(failure);
            }
            let wait = params
                .backoff_base
                .saturating_mul(2u32.saturating_pow(attempts - 1))
                .mul_f64(rand::thread_rng().gen_range(0.5..1.5));
            log::warn!(
                "{}: attempt {attempts} failed ({failure}); retrying in {wait:?}",
                prompt.utt_id
            );
            std::thread::sleep(wait);
        }
    }

    fn name(&self) -> &'static str {
        "http"
    }
}

/// Backend selection, as given on the command line.
#[derive(Clone, Debug, PartialEq)]
pub enum BackendKind {
    Http { endpoint: String },
    Identity,
    Oracle,
    Scripted { table: HashMap<String, String> },
}

impl BackendKind {
    /// `corpus` supplies references for the oracle backend.
    pub fn build(&self, corpus: Option<&Corpus>, params: &GenerationParams) -> Result<Box<dyn CompletionBackend>> {
        Ok(match self {
            BackendKind::Http { endpoint } => Box::new(HttpBackend::new(endpoint.clone(), params.request_timeout)?),
            BackendKind::Identity => Box::new(IdentityBackend),
            BackendKind::Oracle => {
                let corpus = corpus.ok_or_else(|| Error::Config("the oracle backend needs a corpus".into()))?;
                Box::new(OracleBackend::from_corpus(corpus))
            }
            BackendKind::Scripted { table } => Box::new(ScriptedBackend::new(table.clone())),
        })
    }
}
