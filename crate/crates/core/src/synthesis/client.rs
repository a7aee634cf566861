//! Chat-completion clients: the remote endpoint, a replay mock, and a counter.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ChatPrompt;
use crate::rubrics::Score;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("transient endpoint failure: {0}")]
    Transient(String),
    #[error("rate limited by endpoint: {message}")]
    RateLimited {
        message: String,
        retry_after: Option<Duration>,
    },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("endpoint configuration error: {0}")]
    Config(String),
    #[error("endpoint request failed: {0}")]
    Fatal(String),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ClientError::Transient(_) | ClientError::RateLimited { .. }
        )
    }

    /// Errors that make every further request pointless.
    pub fn aborts_run(&self) -> bool {
        matches!(self, ClientError::Auth(_) | ClientError::Config(_))
    }
}

/// A chat-completion backend.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &ChatPrompt) -> Result<String, ClientError>;
}

impl<C: LlmClient + ?Sized> LlmClient for &C {
    fn complete(&self, prompt: &ChatPrompt) -> Result<String, ClientError> {
        (**self).complete(prompt)
    }
}

impl<C: LlmClient + ?Sized> LlmClient for Box<C> {
    fn complete(&self, prompt: &ChatPrompt) -> Result<String, ClientError> {
        (**self).complete(prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "duration_secs")]
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Same attempt budget without sleeping, for tests and mock runs.
    pub fn immediate() -> Self {
        Self {
            initial_backoff: Duration::ZERO,
            ..Self::default()
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff
            .mul_f64(self.multiplier.powi(attempt.saturating_sub(1) as i32))
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Call `complete`, retrying transient failures with exponential backoff.
/// Rate-limit hints from the endpoint extend the wait.
pub fn complete_with_retry(
    client: &dyn LlmClient,
    prompt: &ChatPrompt,
    policy: &RetryPolicy,
) -> Result<String, ClientError> {
    let mut attempt = 1;
    loop {
        match client.complete(prompt) {
            Ok(text) => return Ok(text),
            Err(err) if err.is_retryable() && attempt < policy.max_attempts => {
                let mut wait = policy.backoff(attempt);
                if let ClientError::RateLimited {
                    retry_after: Some(hint),
                    ..
                } = &err
                {
                    wait = wait.max(*hint);
                }
                log::warn!("attempt {attempt} failed ({err}); retrying in {wait:?}");
                std::thread::sleep(wait);
                attempt += 1;
            }
            Err(err) => return Err(err),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// OpenAI-compatible chat completions URL.
    pub url: String,
    pub model_id: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub parallelism: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "https://api.groq.com/openai/v1/chat/completions".into(),
            model_id: "llama3-70b-8192".into(),
            api_key_env: "RDBE_API_KEY".into(),
            timeout_secs: 120,
            parallelism: 4,
        }
    }
}

/// Blocking client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpClient {
    url: String,
    api_key: String,
    http: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
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
    #[serde(default)]
    content: Option<String>,
}

impl HttpClient {
    /// Reads the API key from the configured environment variable. Fails with
    /// [`ClientError::Config`] before any network traffic if it is unset.
    pub fn from_env(config: &EndpointConfig) -> Result<Self, ClientError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                ClientError::Config(format!(
                    "environment variable {} is not set",
                    config.api_key_env
                ))
            })?;
        Self::new(config, api_key)
    }

    pub fn new(config: &EndpointConfig, api_key: String) -> Result<Self, ClientError> {
        if config.url.trim().is_empty() {
            return Err(ClientError::Config("endpoint url is empty".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(Self {
            url: config.url.clone(),
            api_key,
            http,
        })
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, prompt: &ChatPrompt) -> Result<String, ClientError> {
        let body = ChatRequest {
            model: &prompt.model_id,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &prompt.system,
                },
                ChatMessage {
                    role: "user",
                    content: &prompt.user,
                },
            ],
            temperature: prompt.params.temperature,
            max_tokens: prompt.params.max_tokens,
        };
        let response = self
            .http
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_builder() {
                    ClientError::Config(e.to_string())
                } else {
                    ClientError::Transient(e.to_string())
                }
            })?;
        let status = response.status();
        if status.is_success() {
            let parsed: ChatResponse = response
                .json()
                .map_err(|e| ClientError::Fatal(format!("malformed response: {e}")))?;
            return Ok(parsed
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .unwrap_or_default());
        }
        let retry_after = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .and_then(|s| Duration::try_from_secs_f64(s).ok());
        let message = format!("{status}: {}", response.text().unwrap_or_default());
        Err(match status.as_u16() {
            401 | 403 => ClientError::Auth(message),
            429 => ClientError::RateLimited {
                message,
                retry_after,
            },
            408 | 500..=599 => ClientError::Transient(message),
            _ => ClientError::Fatal(message),
        })
    }
}

/// Deterministic offline teacher.
///
/// For reasoning prompts (those carrying a `[Score]` block) it returns a short
/// rationale that ends with the requested score. For any other prompt it
/// returns a sentence with a grid score derived from a hash of the user text.
#[derive(Debug, Clone, Default)]
pub struct MockTeacher;

impl MockTeacher {
    fn block<'a>(user: &'a str, tag: &str) -> Option<&'a str> {
        let start = user.find(&format!("{tag}\n"))? + tag.len() + 1;
        let rest = &user[start..];
        let end = rest.find("\n\n[").unwrap_or(rest.len());
        Some(rest[..end].trim())
    }
}

impl LlmClient for MockTeacher {
    fn complete(&self, prompt: &ChatPrompt) -> Result<String, ClientError> {
        let user = &prompt.user;
        if let Some(score) = Self::block(user, "[Score]") {
            let rubric = Self::block(user, "[Scoring Rubric]").unwrap_or("");
            let subject = Self::block(user, "[Subject]").unwrap_or("");
            let words = Self::block(user, "[Essay]")
                .map(|e| e.split_whitespace().count())
                .unwrap_or(0);
            let rubric_head: String = rubric.chars().take(40).collect();
            let subject_head: String = subject.chars().take(40).collect();
            return Ok(format!(
                "Judged on \"{rubric_head}\", this {words}-word essay on \"{subject_head}\" earns {score}"
            ));
        }
        let digest = Sha256::digest(user.as_bytes());
        let score = Score::all()
            .nth(usize::from(digest[0]) % 9)
            .expect("grid has nine values");
        Ok(format!("I would give this essay a {score} out of 5."))
    }
}

/// Wraps a client and counts calls.
pub struct CountingClient<C> {
    inner: C,
    calls: AtomicUsize,
}

impl<C> CountingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<C: LlmClient> LlmClient for CountingClient<C> {
    fn complete(&self, prompt: &ChatPrompt) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt)
    }
}

/// Replays a fixed queue of responses, then repeats the last one.
pub struct ScriptedClient {
    responses: Mutex<Vec<Result<String, ClientError>>>,
}

impl ScriptedClient {
    pub fn new(responses: Vec<Result<String, ClientError>>) -> Self {
        let mut responses = responses;
        responses.reverse();
        Self {
            responses: Mutex::new(responses),
        }
    }
}

impl LlmClient for ScriptedClient {
    fn complete(&self, _prompt: &ChatPrompt) -> Result<String, ClientError> {
        let mut queue = self.responses.lock().unwrap_or_else(|e| e.into_inner());
        match queue.len() {
            0 => Err(ClientError::Fatal("script exhausted".into())),
            1 => queue[0].clone(),
            _ => queue.pop().expect("nonempty"),
        }
    }
}
