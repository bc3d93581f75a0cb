//! Minimal JSON-over-HTTP client shared by the remote embedding, classifier
//! and chat adapters.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first one.
    pub attempts: u32,
    /// Delay before the second attempt; doubles on each further attempt.
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff_ms: 1000,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(1 << attempt.min(16)))
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    retry: RetryPolicy,
    bearer: Option<String>,
}

impl JsonClient {
    pub fn new(retry: RetryPolicy, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            retry,
            bearer: None,
        }
    }

    pub fn with_bearer(mut self, token: Option<String>) -> Self {
        self.bearer = token;
        self
    }

    /// POSTs `body` and decodes the JSON response. Transport failures, 429
    /// and 5xx responses are retried; other non-2xx statuses fail at once.
    pub fn post(&self, url: &str, body: &Value) -> Result<Value, String> {
        let payload = serde_json::to_vec(body).map_err(|e| e.to_string())?;
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            let mut req = self.agent.post(url).header("Content-Type", "application/json");
            if let Some(token) = &self.bearer {
                req = req.header("Authorization", format!("Bearer {token}"));
            }
            match req.send(&payload[..]) {
                Err(e) => {
                    last = format!("transport failure: {e}");
                    log::warn!("POST {url} attempt {} failed: {e}", attempt + 1);
                }
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| format!("reading response body: {e}"))?;
                    if (200..300).contains(&status) {
                        return serde_json::from_str(&text).map_err(|e| format!("invalid JSON response: {e}"));
                    }
                    last = format!("HTTP {status}: {}", truncate(&text, 200));
                    if status != 429 && status < 500 {
                        return Err(last);
                    }
                    log::warn!("POST {url} attempt {} got {status}", attempt + 1);
                }
            }
        }
        Err(format!("{last} (after {attempts} attempts)"))
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
