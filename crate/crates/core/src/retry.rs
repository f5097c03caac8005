//! Bounded exponential-backoff retries for JSON-over-HTTP calls.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::{debug, warn};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts, including the first one.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 200,
            max_delay_ms: 5_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, where `attempt` is 1-based.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpFailure {
    pub status: Option<u16>,
    pub body: String,
    pub transient: bool,
    pub attempts: u32,
}

fn is_transient_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

/// POST `body` and decode the JSON reply, retrying transient failures.
///
/// Connection errors, timeouts, 408, 429 and 5xx are retried up to
/// `policy.max_attempts` in total. Anything else fails immediately.
pub async fn post_json(
    client: &reqwest::Client,
    url: &str,
    headers: &[(String, String)],
    body: &Value,
    policy: &RetryPolicy,
) -> Result<(Value, u32), HttpFailure> {
    let max = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        let mut req = client.post(url).json(body);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let failure = match req.send().await {
            Ok(resp) => {
                let status = resp.status().as_u16();
                let text = resp.text().await.unwrap_or_default();
                if (200..300).contains(&status) {
                    return serde_json::from_str(&text)
                        .map(|v| (v, attempt))
                        .map_err(|e| HttpFailure {
                            status: Some(status),
                            body: format!("undecodable response ({e}): {text}"),
                            transient: false,
                            attempts: attempt,
                        });
                }
                HttpFailure {
                    status: Some(status),
                    body: text,
                    transient: is_transient_status(status),
                    attempts: attempt,
                }
            }
            Err(e) => HttpFailure {
                status: None,
                body: e.to_string(),
                transient: true,
                attempts: attempt,
            },
        };
        if !failure.transient || attempt >= max {
            warn!(url, attempt, status = ?failure.status, "request failed");
            return Err(failure);
        }
        let delay = policy.backoff(attempt);
        debug!(url, attempt, delay_ms = delay.as_millis() as u64, "transient failure, backing off");
        tokio::time::sleep(delay).await;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 100,
            max_delay_ms: 350,
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(350));
    }
}
