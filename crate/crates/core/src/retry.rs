//! JSON-over-HTTP POST with bounded exponential backoff.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): base * 2^(attempt-1), capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("HTTP status {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        body: String,
        attempts: u32,
    },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("could not decode response: {0}")]
    Decode(String),
}

impl HttpError {
    pub fn status(&self) -> Option<u16> {
        match self {
            HttpError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

fn is_transient_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

pub(crate) fn post_json<B: Serialize, T: DeserializeOwned>(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &B,
    policy: &RetryPolicy,
) -> Result<T, HttpError> {
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        let mut req = client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let transient = match req.send() {
            Ok(resp) => {
                let status = resp.status().as_u16();
                if resp.status().is_success() {
                    let text = resp.text().map_err(|e| HttpError::Decode(e.to_string()))?;
                    return serde_json::from_str(&text).map_err(|e| HttpError::Decode(e.to_string()));
                }
                let body = resp.text().unwrap_or_default();
                let err = HttpError::Status {
                    status,
                    body,
                    attempts: attempt,
                };
                if !is_transient_status(status) {
                    return Err(err);
                }
                err
            }
            Err(e) => {
                let err = HttpError::Transport {
                    message: e.to_string(),
                    attempts: attempt,
                };
                if !(e.is_timeout() || e.is_connect()) {
                    return Err(err);
                }
                err
            }
        };
        if attempt > policy.max_retries {
            return Err(transient);
        }
        tracing::warn!(url, attempt, error = %transient, "retrying");
        std::thread::sleep(policy.backoff(attempt));
    }
}
