//! Blocking JSON-over-HTTP POST with exponential-backoff retries, shared by
//! the completion client and the NLI scoring client.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

/// Environment variable holding the bearer token for remote services.
pub const API_KEY_ENV: &str = "UQRAG_API_KEY";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("service unavailable after {attempts} attempt(s): {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): `base · 2^(retry-1)`.
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    http: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(url: impl Into<String>, api_key: Option<String>, retry: RetryPolicy, timeout: Duration) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client construction");
        JsonClient { http, url: url.into(), api_key, retry }
    }

    /// Reads the API key from [`API_KEY_ENV`] when present.
    pub fn api_key_from_env() -> Option<String> {
        std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty())
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// POSTs `body` and decodes the response. Connection failures, 429 and
    /// 5xx responses are retried; other 4xx statuses and undecodable bodies
    /// fail immediately.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, TransportError> {
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            let mut req = self.http.post(&self.url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send() {
                Ok(resp) => resp,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if status.is_server_error() || status.as_u16() == 429 {
                last = format!("HTTP {status}");
                continue;
            }
            if !status.is_success() {
                let text = resp.text().unwrap_or_default();
                return Err(TransportError::Unavailable {
                    attempts: attempt,
                    last: format!("HTTP {status}: {}", truncate(&text, 200)),
                });
            }
            let bytes = match resp.bytes() {
                Ok(b) => b,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            return serde_json::from_slice(&bytes).map_err(|e| TransportError::Protocol(format!("undecodable response body: {e}")));
        }
        Err(TransportError::Unavailable { attempts, last })
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(1), Duration::from_secs(1));
        assert_eq!(p.delay(2), Duration::from_secs(2));
        assert_eq!(p.delay(3), Duration::from_secs(4));
    }
}
