//! Minimal blocking JSON client for OpenAI-compatible embedding and chat
//! services.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("transport failure after {attempts} attempt(s){}: {message}", batch_suffix(*.batch))]
    Transport {
        attempts: u32,
        batch: Option<usize>,
        message: String,
    },
    #[error("HTTP status {status} after {attempts} attempt(s){}", batch_suffix(*.batch))]
    Status {
        status: u16,
        attempts: u32,
        batch: Option<usize>,
    },
    #[error("invalid response{}: {message}", batch_suffix(*.batch))]
    InvalidResponse { batch: Option<usize>, message: String },
    #[error("count mismatch in batch {batch}: sent {sent} texts, received {received} vectors")]
    CountMismatch { batch: usize, sent: usize, received: usize },
    #[error("empty completion")]
    EmptyCompletion,
}

fn batch_suffix(batch: Option<usize>) -> String {
    batch.map(|b| format!(" (batch {b})")).unwrap_or_default()
}

impl ServiceError {
    /// Transport failures, timeouts and non-2xx responses may succeed on retry.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Self::Transport { .. } | Self::Status { .. })
    }

    pub(crate) fn with_batch(self, index: usize) -> Self {
        match self {
            Self::Transport { attempts, message, .. } => Self::Transport {
                attempts,
                batch: Some(index),
                message,
            },
            Self::Status { status, attempts, .. } => Self::Status {
                status,
                attempts,
                batch: Some(index),
            },
            Self::InvalidResponse { message, .. } => Self::InvalidResponse {
                batch: Some(index),
                message,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceClient {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub max_attempts: u32,
    pub timeout: Duration,
    pub retry_backoff: Duration,
}

impl ServiceClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            max_attempts: 3,
            timeout: Duration::from_secs(120),
            retry_backoff: Duration::from_millis(200),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_max_attempts(mut self, attempts: u32) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_retry_backoff(mut self, backoff: Duration) -> Self {
        self.retry_backoff = backoff;
        self
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into()
    }

    /// POST `body` as JSON and return the raw response text, retrying
    /// retriable failures up to `max_attempts` times.
    pub fn post<B: Serialize>(&self, body: &B) -> Result<String, ServiceError> {
        let agent = self.agent();
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_once(&agent, body, attempt) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retriable() && attempt < self.max_attempts => {
                    log::warn!("request to {} failed ({e}), retrying", self.endpoint);
                    std::thread::sleep(self.retry_backoff * attempt);
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// [`post`](Self::post) and decode the body as `R`.
    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, ServiceError> {
        let text = self.post(body)?;
        serde_json::from_str(&text).map_err(|e| ServiceError::InvalidResponse {
            batch: None,
            message: e.to_string(),
        })
    }

    fn post_once<B: Serialize>(&self, agent: &ureq::Agent, body: &B, attempts: u32) -> Result<String, ServiceError> {
        let transport = |e: ureq::Error| ServiceError::Transport {
            attempts,
            batch: None,
            message: e.to_string(),
        };
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(transport)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ServiceError::Status {
                status,
                attempts,
                batch: None,
            });
        }
        resp.body_mut().read_to_string().map_err(transport)
    }
}
