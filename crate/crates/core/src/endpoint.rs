//! OpenAI-compatible chat-completions client with retry/backoff, an
//! in-flight request cap, and per-endpoint rate limiting.
//!
//! One request carries the whole window (`n` choices), so prompt tokens are
//! charged once per window. Retries cover only pre-body failures (connect,
//! timeout, 429, 5xx); once a response body has been accepted it is never
//! re-issued — malformed bodies are discarded whole and surfaced, pairing
//! with the engine's whole-window retry.

use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::extract::extract_answer;
use crate::generate::{Generator, GeneratorError, GeneratorRequest, Message};
use crate::voting::{Sample, TokenUsage};

/// Connection settings for one OpenAI-compatible endpoint. The API key is
/// read from the named environment variable at construction and never
/// logged.
#[derive(Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub backoff_multiplier: f64,
    pub max_in_flight: u32,
    pub min_request_interval: Duration,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com".into(),
            model_name: "gpt-4".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout: Duration::from_secs(120),
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            backoff_multiplier: 2.0,
            max_in_flight: 8,
            min_request_interval: Duration::ZERO,
        }
    }
}

impl fmt::Debug for EndpointConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EndpointConfig")
            .field("base_url", &self.base_url)
            .field("model_name", &self.model_name)
            .field("api_key_env", &self.api_key_env)
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    n: u32,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<UsageBlock>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBlock {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Counting semaphore for the in-flight cap plus a minimum spacing between
/// request starts.
struct FlightLimiter {
    slots: Mutex<u32>,
    freed: Condvar,
    last_start: Mutex<Option<Instant>>,
    min_interval: Duration,
}

impl FlightLimiter {
    fn new(max_in_flight: u32, min_interval: Duration) -> Self {
        Self {
            slots: Mutex::new(max_in_flight.max(1)),
            freed: Condvar::new(),
            last_start: Mutex::new(None),
            min_interval,
        }
    }

    fn acquire(&self) {
        let mut slots = self.slots.lock().expect("limiter lock");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("limiter wait");
        }
        *slots -= 1;
        drop(slots);

        if !self.min_interval.is_zero() {
            let mut last = self.last_start.lock().expect("limiter lock");
            if let Some(prev) = *last {
                let elapsed = prev.elapsed();
                if elapsed < self.min_interval {
                    std::thread::sleep(self.min_interval - elapsed);
                }
            }
            *last = Some(Instant::now());
        }
    }

    fn release(&self) {
        *self.slots.lock().expect("limiter lock") += 1;
        self.freed.notify_one();
    }
}

/// Network generator for real runs.
pub struct EndpointGenerator {
    config: EndpointConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    limiter: FlightLimiter,
}

impl EndpointGenerator {
    pub fn new(config: EndpointConfig) -> Result<Self, GeneratorError> {
        if config.timeout.is_zero() {
            return Err(GeneratorError::Protocol("timeout must be positive".into()));
        }
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            GeneratorError::Auth(format!(
                "API key environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GeneratorError::Protocol(format!("client construction failed: {e}")))?;
        let limiter = FlightLimiter::new(config.max_in_flight, config.min_request_interval);
        Ok(Self { config, api_key, client, limiter })
    }

    fn completions_url(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn send_once(&self, body: &ChatRequest<'_>) -> Result<ChatResponse, Attempt> {
        self.limiter.acquire();
        let result = self
            .client
            .post(self.completions_url())
            .bearer_auth(&self.api_key)
            .json(body)
            .send();
        self.limiter.release();

        let response = match result {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Err(Attempt::Timeout(e.to_string())),
            Err(e) if e.is_connect() => return Err(Attempt::Connect(e.to_string())),
            Err(e) => return Err(Attempt::Fatal(GeneratorError::Protocol(e.to_string()))),
        };

        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(Attempt::Fatal(GeneratorError::Auth(format!(
                "endpoint returned {status}"
            ))));
        }
        if status.as_u16() == 429 {
            return Err(Attempt::RateLimited);
        }
        if status.is_server_error() {
            return Err(Attempt::Connect(format!("endpoint returned {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(GeneratorError::Protocol(format!(
                "endpoint returned {status}"
            ))));
        }
        // The body was accepted; parse failures are not retried.
        response
            .json::<ChatResponse>()
            .map_err(|e| Attempt::Fatal(GeneratorError::Protocol(format!("bad response body: {e}"))))
    }
}

enum Attempt {
    Timeout(String),
    Connect(String),
    RateLimited,
    Fatal(GeneratorError),
}

impl Generator for EndpointGenerator {
    fn sample(&self, request: &GeneratorRequest) -> Result<Vec<Sample>, GeneratorError> {
        request.params.validate()?;
        let body = ChatRequest {
            model: &self.config.model_name,
            messages: &request.prompt,
            n: request.n,
            temperature: request.params.temperature,
            top_p: request.params.top_p,
            max_tokens: request.params.max_generation_tokens,
        };

        let mut backoff = self.config.initial_backoff;
        let mut attempts = 0u32;
        let response = loop {
            attempts += 1;
            match self.send_once(&body) {
                Ok(response) => break response,
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(retryable) => {
                    if attempts > self.config.max_retries {
                        return Err(match retryable {
                            Attempt::Timeout(d) | Attempt::Connect(d) => {
                                GeneratorError::Timeout { attempts, detail: d }
                            }
                            Attempt::RateLimited => GeneratorError::RateLimited { attempts },
                            Attempt::Fatal(e) => e,
                        });
                    }
                    log::debug!(
                        "retrying request for item {} (attempt {attempts}) after backoff {:?}",
                        request.item_id,
                        backoff
                    );
                    std::thread::sleep(backoff);
                    backoff = backoff.mul_f64(self.config.backoff_multiplier);
                }
            }
        };

        if response.choices.len() != request.n as usize {
            return Err(GeneratorError::Protocol(format!(
                "endpoint returned {} choices, requested {}",
                response.choices.len(),
                request.n
            )));
        }
        let usage = response
            .usage
            .map(|u| TokenUsage::new(u.prompt_tokens, u.completion_tokens))
            .unwrap_or_default();
        let samples = response
            .choices
            .into_iter()
            .enumerate()
            .map(|(i, choice)| {
                let raw = choice.message.content.unwrap_or_default();
                let answer = extract_answer(&raw, request.kind);
                // Request-level usage rides on the first sample so totals
                // stay integer-exact.
                let usage = if i == 0 { usage } else { TokenUsage::default() };
                Sample::new(raw, answer, usage)
            })
            .collect();
        Ok(samples)
    }
}
