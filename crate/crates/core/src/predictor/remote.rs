//! OpenAI-compatible chat-completions adapter.
//!
//! One generic HTTP+JSON client covers every hosted model the harness
//! queries: request `{model, messages[{role, content}], temperature}`,
//! response `choices[0].message.content`. The API key is read from a
//! configured environment variable and sent as a bearer token.
//!
//! Two retry mechanisms, deliberately separate: format failures re-ask
//! immediately (the model simply answered badly), transport failures back
//! off exponentially with jitter. Both draw from the same bounded attempt
//! budget so a trial always terminates.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use super::{PredictionOutcome, Predictor};
use crate::datagen::{Demonstration, TaskSpec};
use crate::linalg::NumericArray;
use crate::prompt::{parse_reply, render_prompt, PromptConfig};
use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("authentication failed (http status {status})")]
    Auth { status: u16 },
    #[error("http status {status}")]
    Status { status: u16 },
    #[error("request timed out after {secs}s")]
    Timeout { secs: u64 },
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed response body: {0}")]
    Protocol(String),
    #[error("api key environment variable {0} is not set")]
    MissingKey(String),
}

impl TransportError {
    /// Auth and missing-key failures are permanent; retrying cannot help.
    fn is_permanent(&self) -> bool {
        matches!(self, TransportError::Auth { .. } | TransportError::MissingKey(_))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

/// Sends one chat-completion request with a single user message and returns
/// the assistant text verbatim.
pub fn send_chat_request(
    client: &reqwest::blocking::Client,
    endpoint_url: &str,
    model: &str,
    api_key: &str,
    prompt: &str,
    temperature: f64,
) -> Result<String, TransportError> {
    let body = json!({
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": temperature,
    });
    let response = client
        .post(endpoint_url)
        .bearer_auth(api_key)
        .json(&body)
        .send()
        .map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout { secs: 0 }
            } else {
                TransportError::Network(e.to_string())
            }
        })?;

    let status = response.status();
    if status.as_u16() == 401 || status.as_u16() == 403 {
        return Err(TransportError::Auth { status: status.as_u16() });
    }
    if !status.is_success() {
        return Err(TransportError::Status { status: status.as_u16() });
    }
    let parsed: ChatResponse = response
        .json()
        .map_err(|e| TransportError::Protocol(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| TransportError::Protocol("response has no choices".into()))
}

/// Sliding-window rate limiter: at most `limit` requests per `window`.
pub struct RateLimiter {
    window: Duration,
    limit: usize,
    history: VecDeque<Instant>,
}

impl RateLimiter {
    pub fn per_minute(limit: u32) -> Self {
        Self::new(Duration::from_secs(60), limit as usize)
    }

    pub fn new(window: Duration, limit: usize) -> Self {
        Self { window, limit, history: VecDeque::new() }
    }

    /// Blocks until a request may start, then records it. `limit == 0`
    /// disables limiting.
    pub fn acquire(&mut self) {
        if self.limit == 0 {
            return;
        }
        loop {
            let now = Instant::now();
            while let Some(&front) = self.history.front() {
                if now.duration_since(front) >= self.window {
                    self.history.pop_front();
                } else {
                    break;
                }
            }
            if self.history.len() < self.limit {
                self.history.push_back(now);
                return;
            }
            let wait = self.window - now.duration_since(*self.history.front().unwrap());
            std::thread::sleep(wait);
        }
    }
}

pub(super) struct RemoteChatSettings {
    pub id: String,
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub rate_limit_per_minute: u32,
    pub timeout_secs: u64,
    pub backoff_base_ms: u64,
    pub max_retries: usize,
    pub prompt: PromptConfig,
    pub run_seed: u64,
}

pub struct RemoteChatPredictor {
    settings: RemoteChatSettings,
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
    jitter: SplitMix64,
}

impl RemoteChatPredictor {
    pub(super) fn new(settings: RemoteChatSettings) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build()
            .expect("client construction cannot fail with static options");
        let limiter = RateLimiter::per_minute(settings.rate_limit_per_minute);
        let jitter = SplitMix64::new(derive_seed(settings.run_seed, 0x6a69_7474_6572, 0));
        Self { settings, client, limiter, jitter }
    }

    fn backoff(&mut self, transport_failures: u32) {
        let base = self.settings.backoff_base_ms.max(1);
        let exp = base.saturating_mul(1u64 << (transport_failures.saturating_sub(1)).min(5));
        let jitter = (self.jitter.next_f64() * 0.1 * exp as f64) as u64;
        std::thread::sleep(Duration::from_millis(exp + jitter));
    }
}

impl Predictor for RemoteChatPredictor {
    fn id(&self) -> &str {
        &self.settings.id
    }

    fn predict(
        &mut self,
        context: &[Demonstration],
        query: &NumericArray,
        task: &TaskSpec,
        _trial_index: usize,
    ) -> PredictionOutcome {
        let prompt =
            match render_prompt(&self.settings.prompt, context, query, task.output_len()) {
                Ok(p) => p,
                Err(e) => return PredictionOutcome::failure(e.to_string(), 1, vec![0]),
            };
        let api_key = match std::env::var(&self.settings.api_key_env) {
            Ok(k) => k,
            Err(_) => {
                return PredictionOutcome::failure(
                    TransportError::MissingKey(self.settings.api_key_env.clone()).to_string(),
                    1,
                    vec![0],
                );
            }
        };

        let mut latency_ms = Vec::new();
        let mut last_error = String::new();
        let mut transport_failures = 0u32;
        for attempt in 1..=self.settings.max_retries {
            self.limiter.acquire();
            let started = Instant::now();
            let result = send_chat_request(
                &self.client,
                &self.settings.endpoint_url,
                &self.settings.model_name,
                &api_key,
                &prompt,
                self.settings.temperature,
            );
            latency_ms.push(started.elapsed().as_millis() as u64);

            match result {
                Ok(text) => match parse_reply(&text, task.output_len()) {
                    Ok(parsed) => {
                        return PredictionOutcome::success(parsed.values, attempt, latency_ms)
                    }
                    Err(e) => {
                        log::debug!(
                            "{}: attempt {attempt} bad format ({e}); reply {:?}",
                            self.settings.id,
                            text.chars().take(80).collect::<String>()
                        );
                        last_error = format!("format: {e}");
                        // Format retries re-ask immediately, no backoff.
                    }
                },
                Err(e) if e.is_permanent() => {
                    log::warn!("{}: permanent failure: {e}", self.settings.id);
                    return PredictionOutcome::failure(e.to_string(), attempt, latency_ms);
                }
                Err(e) => {
                    log::debug!("{}: attempt {attempt} transport error: {e}", self.settings.id);
                    last_error = format!("transport: {e}");
                    transport_failures += 1;
                    if attempt < self.settings.max_retries {
                        self.backoff(transport_failures);
                    }
                }
            }
        }
        PredictionOutcome::failure(
            format!("retry budget exhausted; last error: {last_error}"),
            self.settings.max_retries,
            latency_ms,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_content_is_extracted() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"7.5;"}}]}"#;
        let parsed: ChatResponse = serde_json::from_str(body).unwrap();
        assert_eq!(parsed.choices[0].message.content, "7.5;");
    }

    #[test]
    fn empty_choices_is_protocol_error_shape() {
        let body = r#"{"choices":[]}"#;
        let parsed: ChatResponse = serde_json::from_str(body).unwrap();
        assert!(parsed.choices.is_empty());
    }

    #[test]
    fn rate_limiter_enforces_window() {
        let mut limiter = RateLimiter::new(Duration::from_millis(200), 3);
        let start = Instant::now();
        for _ in 0..3 {
            limiter.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(100), "first burst should not block");
        limiter.acquire(); // fourth call must wait out the window
        assert!(
            start.elapsed() >= Duration::from_millis(200),
            "fourth acquire returned after {:?}",
            start.elapsed()
        );
    }

    #[test]
    fn rate_limiter_zero_means_unlimited() {
        let mut limiter = RateLimiter::new(Duration::from_secs(60), 0);
        let start = Instant::now();
        for _ in 0..100 {
            limiter.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(50));
    }

    #[test]
    fn permanent_errors_flagged() {
        assert!(TransportError::Auth { status: 401 }.is_permanent());
        assert!(TransportError::MissingKey("K".into()).is_permanent());
        assert!(!TransportError::Status { status: 429 }.is_permanent());
        assert!(!TransportError::Timeout { secs: 1 }.is_permanent());
    }
}
