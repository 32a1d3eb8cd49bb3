//! LLM gateway: chat completions and embeddings over HTTP, with bounded
//! concurrency, retry with exponential backoff, and deterministic
//! record/replay.
//!
//! Wire formats follow the common chat-completion shape. Chat: POST
//! `{"model", "messages": [{"role": "user", "content"}], "temperature"}`,
//! response `choices[0].message.content`. Embeddings: POST `{"model",
//! "input": [...]}`, response `data[i].embedding` in input order.
//!
//! Modes: `live` talks to the endpoints and stores nothing; `record` talks
//! to the endpoints and appends every response to the transcript (cached
//! entries are reused, so an interrupted recording resumes); `replay` never
//! touches the network and fails loudly on any request that was not
//! recorded. Replayed campaigns are byte-reproducible and safe to run in CI.

mod template;
mod transcript;

use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use template::{render_template, PromptTemplate, TemplateStore, BUILTIN_TEMPLATE_IDS};
pub use transcript::{chat_key, embed_key, CallKind, Transcript};

/// Environment variable holding the bearer token for both endpoints. The
/// value is attached as a sensitive header and never logged.
pub const API_TOKEN_ENV: &str = "AVERSE_API_TOKEN";

const BACKOFF_BASE_MS: u64 = 50;
const REQUEST_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway config: {0}")]
    InvalidConfig(String),
    #[error("template {template_id:?}: unbound placeholder {placeholder:?}")]
    UnboundPlaceholder {
        template_id: String,
        placeholder: String,
    },
    #[error("unknown template {id:?}")]
    UnknownTemplate { id: String },
    #[error("template dir {dir}: {message}")]
    TemplateDir { dir: String, message: String },
    #[error("{endpoint}: giving up after {attempts} attempts: {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        message: String,
    },
    #[error("{endpoint}: protocol error: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("embedding batch: expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("replay transcript has no entry for request key {key}")]
    ReplayMiss { key: String },
    #[error("replay transcript not found at {path}")]
    MissingTranscript { path: String },
    #[error("transcript {path}:{line}: {message}")]
    TranscriptParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("transcript {path}: {message}")]
    TranscriptIo { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GatewayConfig {
    #[serde(default)]
    pub chat_endpoint: String,
    #[serde(default)]
    pub embed_endpoint: String,
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency_limit: usize,
    pub mode: GatewayMode,
    #[serde(default)]
    pub transcript_path: Option<PathBuf>,
}

fn default_max_retries() -> u32 {
    3
}

fn default_concurrency() -> usize {
    4
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_name.is_empty() {
            return Err(GatewayError::InvalidConfig("model_name is empty".into()));
        }
        if self.concurrency_limit == 0 {
            return Err(GatewayError::InvalidConfig(
                "concurrency_limit must be at least 1".into(),
            ));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidConfig(format!(
                "temperature {} is not a finite non-negative number",
                self.temperature
            )));
        }
        match self.mode {
            GatewayMode::Live => {}
            GatewayMode::Record | GatewayMode::Replay => {
                if self.transcript_path.is_none() {
                    return Err(GatewayError::InvalidConfig(format!(
                        "{:?} mode requires transcript_path",
                        self.mode
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One embedding, as returned by the embedding endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Cosine similarity in `[-1, 1]`; zero-norm vectors compare as 0.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        let na = self.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = other.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Counting semaphore over std primitives; bounds in-flight HTTP requests.
struct Gate {
    permits: Mutex<usize>,
    available: Condvar,
}

struct GatePermit<'a>(&'a Gate);

impl Gate {
    fn new(permits: usize) -> Self {
        Gate {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        GatePermit(self)
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.available.notify_one();
    }
}

/// Shared client for chat and embedding calls. Safe to share across campaign
/// workers; transcript writes are serialized internally and the in-flight
/// request count never exceeds `concurrency_limit`.
pub struct Gateway {
    config: GatewayConfig,
    client: reqwest::blocking::Client,
    transcript: Mutex<Transcript>,
    gate: Gate,
}

enum AttemptError {
    Retryable(String),
    Fatal(GatewayError),
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let transcript = match (config.mode, &config.transcript_path) {
            (GatewayMode::Replay, Some(path)) => Transcript::load(path)?,
            (GatewayMode::Record, Some(path)) => Transcript::open_for_record(path)?,
            _ => Transcript::empty(),
        };
        let mut headers = reqwest::header::HeaderMap::new();
        if let Ok(token) = std::env::var(API_TOKEN_ENV) {
            if let Ok(mut value) =
                reqwest::header::HeaderValue::from_str(&format!("Bearer {token}"))
            {
                value.set_sensitive(true);
                headers.insert(reqwest::header::AUTHORIZATION, value);
            }
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .default_headers(headers)
            .build()
            .map_err(|e| GatewayError::InvalidConfig(format!("HTTP client: {e}")))?;
        let gate = Gate::new(config.concurrency_limit);
        Ok(Gateway {
            config,
            client,
            transcript: Mutex::new(transcript),
            gate,
        })
    }

    pub fn mode(&self) -> GatewayMode {
        self.config.mode
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// One chat completion for `prompt`. Returns the assistant message
    /// content verbatim.
    pub fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        let key = chat_key(&self.config.model_name, self.config.temperature, prompt);
        if self.config.mode != GatewayMode::Live {
            if let Some(value) = self.transcript.lock().unwrap().get(&key, CallKind::Chat) {
                return decode_chat(value);
            }
            if self.config.mode == GatewayMode::Replay {
                return Err(GatewayError::ReplayMiss { key });
            }
        }
        let content = self.live_chat(prompt)?;
        if self.config.mode == GatewayMode::Record {
            self.transcript.lock().unwrap().insert(
                key,
                CallKind::Chat,
                serde_json::Value::String(content.clone()),
            )?;
        }
        Ok(content)
    }

    /// Embeds a batch of texts in one request; result order matches input
    /// order. All vectors in a batch must share one dimension.
    pub fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let key = embed_key(&self.config.model_name, texts);
        if self.config.mode != GatewayMode::Live {
            if let Some(value) = self.transcript.lock().unwrap().get(&key, CallKind::Embed) {
                return decode_embed(value, texts.len());
            }
            if self.config.mode == GatewayMode::Replay {
                return Err(GatewayError::ReplayMiss { key });
            }
        }
        let vectors = self.live_embed(texts)?;
        if self.config.mode == GatewayMode::Record {
            let value = serde_json::to_value(&vectors).expect("embeddings serialize");
            self.transcript
                .lock()
                .unwrap()
                .insert(key, CallKind::Embed, value)?;
        }
        Ok(vectors)
    }

    fn live_chat(&self, prompt: &str) -> Result<String, GatewayError> {
        let body = serde_json::json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        let endpoint = &self.config.chat_endpoint;
        if endpoint.is_empty() {
            return Err(GatewayError::InvalidConfig(
                "chat_endpoint is empty but a live chat call was needed".into(),
            ));
        }
        let value = self.post_with_retry(endpoint, &body)?;
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::Protocol {
                endpoint: endpoint.clone(),
                message: "response missing choices[0].message.content".into(),
            })?;
        Ok(content.to_string())
    }

    fn live_embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let body = serde_json::json!({
            "model": self.config.model_name,
            "input": texts,
        });
        let endpoint = &self.config.embed_endpoint;
        if endpoint.is_empty() {
            return Err(GatewayError::InvalidConfig(
                "embed_endpoint is empty but a live embedding call was needed".into(),
            ));
        }
        let value = self.post_with_retry(endpoint, &body)?;
        let data = value["data"].as_array().ok_or_else(|| GatewayError::Protocol {
            endpoint: endpoint.clone(),
            message: "response missing data array".into(),
        })?;
        if data.len() != texts.len() {
            return Err(GatewayError::Protocol {
                endpoint: endpoint.clone(),
                message: format!("sent {} inputs, got {} embeddings", texts.len(), data.len()),
            });
        }
        let mut vectors = Vec::with_capacity(data.len());
        for item in data {
            let values = item["embedding"]
                .as_array()
                .ok_or_else(|| GatewayError::Protocol {
                    endpoint: endpoint.clone(),
                    message: "data item missing embedding array".into(),
                })?
                .iter()
                .map(|v| v.as_f64())
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| GatewayError::Protocol {
                    endpoint: endpoint.clone(),
                    message: "embedding contains non-numeric values".into(),
                })?;
            vectors.push(EmbeddingVector(values));
        }
        check_dims(&vectors)?;
        Ok(vectors)
    }

    fn post_with_retry(
        &self,
        endpoint: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, GatewayError> {
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << (attempt - 1)));
            }
            match self.post_once(endpoint, body) {
                Ok(value) => return Ok(value),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(message)) => last = message,
            }
        }
        Err(GatewayError::Transport {
            endpoint: endpoint.to_string(),
            attempts,
            message: last,
        })
    }

    fn post_once(
        &self,
        endpoint: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, AttemptError> {
        let _permit = self.gate.acquire();
        let response = self
            .client
            .post(endpoint)
            .json(body)
            .send()
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(GatewayError::Protocol {
                endpoint: endpoint.to_string(),
                message: format!("HTTP {status}"),
            }));
        }
        response
            .json()
            .map_err(|e| AttemptError::Fatal(GatewayError::Protocol {
                endpoint: endpoint.to_string(),
                message: format!("bad response body: {e}"),
            }))
    }
}

fn decode_chat(value: &serde_json::Value) -> Result<String, GatewayError> {
    value
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| GatewayError::Protocol {
            endpoint: "<transcript>".into(),
            message: "recorded chat response is not a string".into(),
        })
}

fn decode_embed(value: &serde_json::Value, expected: usize) -> Result<Vec<EmbeddingVector>, GatewayError> {
    let vectors: Vec<EmbeddingVector> =
        serde_json::from_value(value.clone()).map_err(|e| GatewayError::Protocol {
            endpoint: "<transcript>".into(),
            message: format!("recorded embedding response: {e}"),
        })?;
    if vectors.len() != expected {
        return Err(GatewayError::Protocol {
            endpoint: "<transcript>".into(),
            message: format!(
                "recorded batch has {} embeddings, request wants {expected}",
                vectors.len()
            ),
        });
    }
    check_dims(&vectors)?;
    Ok(vectors)
}

fn check_dims(vectors: &[EmbeddingVector]) -> Result<(), GatewayError> {
    if let Some(first) = vectors.first() {
        for v in vectors {
            if v.dim() != first.dim() {
                return Err(GatewayError::DimensionMismatch {
                    expected: first.dim(),
                    got: v.dim(),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::StubServer;

    fn live_config(chat: &str, embed: &str) -> GatewayConfig {
        GatewayConfig {
            chat_endpoint: chat.into(),
            embed_endpoint: embed.into(),
            model_name: "test-model".into(),
            temperature: 0.0,
            max_retries: 1,
            concurrency_limit: 4,
            mode: GatewayMode::Live,
            transcript_path: None,
        }
    }

    #[test]
    fn config_defaults_deserialize() {
        let config: GatewayConfig = serde_json::from_str(
            r#"{"model_name": "m", "mode": "live"}"#,
        )
        .unwrap();
        assert_eq!(config.max_retries, 3);
        assert_eq!(config.concurrency_limit, 4);
        assert_eq!(config.temperature, 0.0);
        config.validate().unwrap();
    }

    #[test]
    fn replay_requires_transcript_path() {
        let mut config = live_config("", "");
        config.mode = GatewayMode::Replay;
        assert!(matches!(
            config.validate(),
            Err(GatewayError::InvalidConfig(_))
        ));
    }

    #[test]
    fn chat_round_trip() {
        let server = StubServer::chat(|content| format!("echo: {content}"));
        let gateway = Gateway::new(live_config(&server.url(), &server.url())).unwrap();
        assert_eq!(gateway.complete("hi").unwrap(), "echo: hi");
    }

    #[test]
    fn embed_round_trip_preserves_order() {
        let server = StubServer::embed(6);
        let gateway = Gateway::new(live_config(&server.url(), &server.url())).unwrap();
        let out = gateway.embed(&["alpha", "beta", "alpha"]).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], out[2]);
        assert_ne!(out[0], out[1]);
        assert_eq!(out[0].dim(), 6);
        assert!(gateway.embed(&[]).unwrap().is_empty());
    }

    #[test]
    fn record_then_replay_is_identical_and_offline() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let recorded: (String, Vec<EmbeddingVector>);
        {
            let server = StubServer::chat_and_embed(|c| format!("r:{c}"), 4);
            let mut config = live_config(&server.url(), &server.url());
            config.mode = GatewayMode::Record;
            config.transcript_path = Some(path.clone());
            let gateway = Gateway::new(config).unwrap();
            let chat = gateway.complete("p1").unwrap();
            let emb = gateway.embed(&["a", "b"]).unwrap();
            // a cached key must not trigger a second HTTP call
            let calls_before = server.calls();
            assert_eq!(gateway.complete("p1").unwrap(), chat);
            assert_eq!(server.calls(), calls_before);
            recorded = (chat, emb);
        }
        // no server at all in replay mode
        let config = GatewayConfig {
            chat_endpoint: String::new(),
            embed_endpoint: String::new(),
            model_name: "test-model".into(),
            temperature: 0.0,
            max_retries: 0,
            concurrency_limit: 2,
            mode: GatewayMode::Replay,
            transcript_path: Some(path),
        };
        let gateway = Gateway::new(config).unwrap();
        assert_eq!(gateway.complete("p1").unwrap(), recorded.0);
        assert_eq!(gateway.embed(&["a", "b"]).unwrap(), recorded.1);
        let err = gateway.complete("never recorded").unwrap_err();
        match err {
            GatewayError::ReplayMiss { key } => assert_eq!(key.len(), 64),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn concurrency_limit_is_enforced() {
        let server = StubServer::chat(|_| "ok".into()).with_delay_ms(30);
        let mut config = live_config(&server.url(), &server.url());
        config.concurrency_limit = 3;
        let gateway = std::sync::Arc::new(Gateway::new(config).unwrap());
        std::thread::scope(|scope| {
            for i in 0..12 {
                let gateway = std::sync::Arc::clone(&gateway);
                scope.spawn(move || {
                    gateway.complete(&format!("p{i}")).unwrap();
                });
            }
        });
        assert_eq!(server.calls(), 12);
        assert!(
            server.max_in_flight() <= 3,
            "observed {} concurrent requests",
            server.max_in_flight()
        );
    }

    #[test]
    fn transient_errors_retry_then_succeed() {
        use std::sync::atomic::{AtomicU32, Ordering};
        let failures = std::sync::Arc::new(AtomicU32::new(0));
        let f = std::sync::Arc::clone(&failures);
        let server = StubServer::spawn(move |req| {
            if f.fetch_add(1, Ordering::SeqCst) < 2 {
                crate::testing::StubResponse::json(503, "{}")
            } else {
                let content = req.body["messages"][0]["content"].as_str().unwrap_or("");
                crate::testing::StubResponse::json(
                    200,
                    serde_json::json!({
                        "choices": [{"message": {"content": format!("ok:{content}")}}]
                    })
                    .to_string(),
                )
            }
        });
        let mut config = live_config(&server.url(), &server.url());
        config.max_retries = 3;
        let gateway = Gateway::new(config).unwrap();
        assert_eq!(gateway.complete("x").unwrap(), "ok:x");
        assert_eq!(server.calls(), 3);
    }

    #[test]
    fn non_retryable_status_is_fatal() {
        let server = StubServer::spawn(|_| crate::testing::StubResponse::json(400, "{}"));
        let mut config = live_config(&server.url(), &server.url());
        config.max_retries = 3;
        let gateway = Gateway::new(config).unwrap();
        let err = gateway.complete("x").unwrap_err();
        assert!(matches!(err, GatewayError::Protocol { .. }), "{err}");
        assert_eq!(server.calls(), 1);
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let server = StubServer::spawn(|_| {
            crate::testing::StubResponse::json(
                200,
                r#"{"data": [{"embedding": [1.0, 0.0]}, {"embedding": [1.0]}]}"#,
            )
        });
        let gateway = Gateway::new(live_config(&server.url(), &server.url())).unwrap();
        let err = gateway.embed(&["a", "b"]).unwrap_err();
        assert!(matches!(err, GatewayError::DimensionMismatch { .. }));
    }
}
