//! Blocking JSON-over-HTTP client with bounded exponential backoff.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    4
}

fn default_backoff() -> u64 {
    500
}

fn default_in_flight() -> usize {
    4
}

/// Connection settings shared by remote embedders and generators.
///
/// The bearer token is read from the environment variable named by
/// `api_key_env` at request time and is never stored in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_ms: default_backoff(),
            max_in_flight: default_in_flight(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    config: RemoteConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl JsonClient {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn token(&self) -> Result<Option<String>> {
        match &self.config.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| Error::Remote(format!("environment variable {var} is not set"))),
        }
    }

    fn attempt(&self, body: &Value, token: Option<&str>) -> std::result::Result<Value, Attempt> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(t) = token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => resp
                .body_mut()
                .read_json::<Value>()
                .map_err(|e| Attempt::Retry(format!("unreadable response: {e}"))),
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                Err(Attempt::Retry(format!("HTTP {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => Err(Attempt::Fatal(format!("HTTP {code}"))),
            Err(e) => Err(Attempt::Retry(e.to_string())),
        }
    }

    /// POSTs `body`, retrying transport errors, 429 and 5xx up to
    /// `max_retries` times with doubling delays.
    pub fn post(&self, body: &Value) -> Result<Value> {
        let token = self.token()?;
        let mut delay = self.config.backoff_ms;
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            match self.attempt(body, token.as_deref()) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(msg)) => {
                    return Err(Error::Remote(format!("{}: {msg}", self.config.endpoint)));
                }
                Err(Attempt::Retry(msg)) => {
                    log::warn!("{} attempt {} failed: {msg}", self.config.endpoint, attempt + 1);
                    last = msg;
                }
            }
            if attempt < self.config.max_retries {
                std::thread::sleep(Duration::from_millis(delay));
                delay = delay.saturating_mul(2).min(30_000);
            }
        }
        Err(Error::Remote(format!(
            "{}: giving up after {} attempts: {last}",
            self.config.endpoint,
            self.config.max_retries + 1
        )))
    }
}
