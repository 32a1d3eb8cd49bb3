//! Remote scorer: wraps an external verification service speaking
//! JSON-over-HTTP. Request `{"text_a": ..., "text_b": ...}`, response
//! `{"score": <float in [0, 1]>}`.
//!
//! Transient failures (transport errors, HTTP 429 and 5xx) are retried with
//! exponential backoff. An out-of-range score is a contract violation by the
//! service and is never retried or clamped; calibration downstream depends on
//! scores being genuine.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Scorer, VerifierError, VerifierScore};
use crate::gateway::API_TOKEN_ENV;

const MAX_ATTEMPTS: u32 = 4;
const BACKOFF_BASE_MS: u64 = 50;

#[derive(Serialize)]
struct ScoreRequest<'a> {
    text_a: &'a str,
    text_b: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

pub struct RemoteScorer {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl RemoteScorer {
    /// Builds the HTTP client with the given request timeout. A bearer token
    /// is attached from the environment when present; its value is never
    /// logged or echoed into errors.
    pub fn new(endpoint_url: String, timeout_ms: u64) -> Result<Self, VerifierError> {
        super::ScorerSpec::Remote {
            endpoint_url: endpoint_url.clone(),
            timeout_ms,
        }
        .validate()?;
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
            .timeout(Duration::from_millis(timeout_ms))
            .default_headers(headers)
            .build()
            .map_err(|e| VerifierError::Protocol {
                endpoint: endpoint_url.clone(),
                message: format!("failed to build HTTP client: {e}"),
            })?;
        Ok(RemoteScorer {
            endpoint: endpoint_url,
            client,
        })
    }

    fn attempt(&self, text_a: &str, text_b: &str) -> Result<VerifierScore, AttemptError> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(&ScoreRequest { text_a, text_b })
            .send()
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(VerifierError::Protocol {
                endpoint: self.endpoint.clone(),
                message: format!("HTTP {status}"),
            }));
        }
        let body: ScoreResponse = response.json().map_err(|e| {
            AttemptError::Fatal(VerifierError::Protocol {
                endpoint: self.endpoint.clone(),
                message: format!("bad response body: {e}"),
            })
        })?;
        VerifierScore::new(body.score).map_err(|_| {
            AttemptError::Fatal(VerifierError::ScoreOutOfRange {
                endpoint: self.endpoint.clone(),
                score: body.score,
            })
        })
    }
}

enum AttemptError {
    Retryable(String),
    Fatal(VerifierError),
}

impl Scorer for RemoteScorer {
    fn name(&self) -> String {
        format!("remote({})", self.endpoint)
    }

    fn score_pair(&self, text_a: &str, text_b: &str) -> Result<VerifierScore, VerifierError> {
        let mut last = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(
                    BACKOFF_BASE_MS << (attempt - 1),
                ));
            }
            match self.attempt(text_a, text_b) {
                Ok(score) => return Ok(score),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(message)) => last = message,
            }
        }
        Err(VerifierError::Transport {
            endpoint: self.endpoint.clone(),
            attempts: MAX_ATTEMPTS,
            message: last,
        })
    }
}
