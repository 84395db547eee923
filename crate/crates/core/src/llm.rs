//! Text-completion backends.
//!
//! Three implementations share [`TextBackend`]: an OpenAI-compatible HTTP
//! client, a scripted replayer keyed by prompt hash, and a deterministic
//! heuristic planner that reads the retrieval prompt itself.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        Self {
            system_text: system_text.into(),
            user_text: user_text.into(),
            max_tokens: 1024,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Scripted,
    Heuristic,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("no scripted reply for prompt hash {0}")]
    MissingFixture(String),
    #[error("request failed after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("backend cannot answer this prompt: {0}")]
    UnsupportedPrompt(String),
    #[error("fixture file error: {0}")]
    Fixture(String),
}

pub trait TextBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError>;
}

/// Lowercase hex SHA-256 over the system text, a NUL byte, and the user
/// text. Scripted fixtures are keyed by this value.
pub fn prompt_hash(req: &CompletionRequest) -> String {
    let mut h = Sha256::new();
    h.update(req.system_text.as_bytes());
    h.update([0u8]);
    h.update(req.user_text.as_bytes());
    hex::encode(h.finalize())
}

/// Replays canned replies. Unknown prompts are an error, never a guess.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    replies: BTreeMap<String, String>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(replies: BTreeMap<String, String>) -> Self {
        Self { replies }
    }

    /// Fixture file: a JSON object mapping prompt hash to reply text.
    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        serde_json::from_str(text)
            .map(Self::from_map)
            .map_err(|e| LlmError::Fixture(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn insert(&mut self, req: &CompletionRequest, reply: impl Into<String>) {
        self.replies.insert(prompt_hash(req), reply.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.replies).expect("string map serializes")
    }
}

impl TextBackend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let key = prompt_hash(req);
        self.replies.get(&key).cloned().ok_or(LlmError::MissingFixture(key))
    }
}

/// Model-free planner: parses the retrieval prompt and ranks rooms and nodes
/// by token-set similarity to the queried object.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicBackend;

impl TextBackend for HeuristicBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Heuristic
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        crate::retrieval::heuristic::respond(&req.user_text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: f64,
    /// Total attempts, first one included.
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 30.0,
            max_attempts: 3,
            backoff_ms: 500,
            max_in_flight: 4,
        }
    }
}

struct Semaphore {
    count: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            count: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut c = self.count.lock().unwrap_or_else(|e| e.into_inner());
        while *c == 0 {
            c = self.cv.wait(c).unwrap_or_else(|e| e.into_inner());
        }
        *c -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

/// OpenAI-compatible chat-completions client.
pub struct LiveBackend {
    config: LiveConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    in_flight: Semaphore,
}

impl std::fmt::Debug for LiveBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveBackend")
            .field("config", &self.config)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl LiveBackend {
    /// Reads the credential from `config.api_key_env`.
    pub fn from_env(config: LiveConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LlmError::MissingCredential(config.api_key_env.clone()))?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: LiveConfig, api_key: String) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| LlmError::Network {
                attempts: 0,
                message: e.to_string(),
            })?;
        let in_flight = Semaphore::new(config.max_in_flight);
        Ok(Self {
            config,
            api_key,
            client,
            in_flight,
        })
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &ChatRequest<'_>, timeout: Duration) -> Result<String, (bool, LlmError)> {
        let resp = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.api_key)
            .timeout(timeout)
            .json(body)
            .send()
            .map_err(|e| {
                (
                    true,
                    LlmError::Network {
                        attempts: 1,
                        message: e.to_string(),
                    },
                )
            })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            (
                true,
                LlmError::Network {
                    attempts: 1,
                    message: e.to_string(),
                },
            )
        })?;
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err((
                retryable,
                LlmError::Http {
                    status: status.as_u16(),
                    body: text.chars().take(500).collect(),
                },
            ));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| (false, LlmError::BadResponse(e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| (false, LlmError::BadResponse("no choices[0].message.content".into())))
    }
}

impl TextBackend for LiveBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let _permit = self.in_flight.acquire();
        let body = ChatRequest {
            model: &self.config.model,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: &req.system_text,
                },
                ChatMessage {
                    role: "user",
                    content: &req.user_text,
                },
            ],
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        };
        let per_attempt = Duration::from_secs_f64(self.config.timeout_secs.max(0.001));
        let attempts = self.config.max_attempts.max(1);
        // Whole call, backoff included, fits in timeout x attempts.
        let deadline = Instant::now() + per_attempt * attempts;
        let mut last = None;
        for i in 0..attempts {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                break;
            }
            match self.attempt(&body, per_attempt.min(remaining)) {
                Ok(text) => return Ok(text),
                Err((false, e)) => return Err(e),
                Err((true, e)) => {
                    log::warn!("completion attempt {} failed: {e}", i + 1);
                    last = Some(e);
                }
            }
            if i + 1 < attempts {
                let backoff = Duration::from_millis(self.config.backoff_ms.saturating_mul(1 << i));
                std::thread::sleep(backoff.min(deadline.saturating_duration_since(Instant::now())));
            }
        }
        Err(match last {
            Some(LlmError::Network { message, .. }) => LlmError::Network { attempts, message },
            Some(other) => other,
            None => LlmError::Network {
                attempts,
                message: "deadline exceeded".into(),
            },
        })
    }
}
