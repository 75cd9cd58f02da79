//! Chat-completion gateway.
//!
//! A [`Gateway`] wraps one [`Provider`] with the profile's concurrency cap and
//! retry policy. Providers only perform single attempts; everything about
//! retrying lives here.

mod http;
mod replay;
mod scripted;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::model::ModelRef;
use crate::prompt::PromptText;

pub use http::OpenAiChatProvider;
pub use scripted::ScriptedProvider;
pub use replay::{
    fixture_key, replay_complete, FixtureEntry, RecordingProvider, ReplayFixture, ReplayProvider,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: ModelRef,
    pub prompt: PromptText,
    pub max_output_tokens: u32,
    /// `None` leaves sampling temperature to the provider default.
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub latency_ms: u64,
    #[serde(default)]
    pub provider_meta: BTreeMap<String, serde_json::Value>,
}

fn default_timeout_ms() -> u64 {
    120_000
}

fn default_max_parallel() -> usize {
    4
}

fn default_retry_max() -> u32 {
    5
}

fn default_backoff_base_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderProfile {
    pub name: String,
    pub endpoint_url: String,
    /// Environment variable holding the API key. Empty means no auth.
    #[serde(default)]
    pub auth_env_var: String,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_retry_max")]
    pub retry_max: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

impl ProviderProfile {
    /// Profile used for the deterministic replay provider.
    pub fn replay(max_parallel: usize) -> Self {
        Self {
            name: "replay".into(),
            endpoint_url: String::new(),
            auth_env_var: String::new(),
            max_parallel: max_parallel.max(1),
            retry_max: 0,
            backoff_base_ms: 1,
            timeout_ms: default_timeout_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_parallel == 0 {
            return Err(GatewayError::InvalidProfile(format!(
                "{}: max_parallel must be at least 1",
                self.name
            )));
        }
        if self.backoff_base_ms == 0 {
            return Err(GatewayError::InvalidProfile(format!(
                "{}: backoff_base_ms must be positive",
                self.name
            )));
        }
        Ok(())
    }

    /// Delay before retry number `attempt + 1`: `base * 2^attempt` plus up to
    /// half that again as jitter.
    pub fn backoff_delay(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let exp = self
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(60_000);
        let jitter = rng.gen_range(0..=exp / 2);
        Duration::from_millis(exp + jitter)
    }
}

/// Outcome of a single attempt against a provider.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("rate limited")]
    RateLimited,
    #[error("server error (HTTP {0})")]
    Server(u16),
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("credential missing: set {0}")]
    AuthMissing(String),
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed provider reply: {0}")]
    Malformed(String),
    #[error("no replay fixture for key {key}")]
    FixtureMiss { key: String, context: String },
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            ProviderError::RateLimited
                | ProviderError::Server(_)
                | ProviderError::Timeout
                | ProviderError::Transport(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("API key missing: environment variable {env_var} is not set")]
    AuthMissing { env_var: String },
    #[error("gave up after {attempts} attempts; last error: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed provider reply: {0}")]
    MalformedProviderReply(String),
    #[error("replay fixture miss for key {key} ({context})")]
    FixtureMiss { key: String, context: String },
    #[error("provider rejected request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("no provider profile named {0:?}")]
    UnknownProvider(String),
    #[error("invalid provider profile: {0}")]
    InvalidProfile(String),
}

/// A single-attempt completion backend.
#[async_trait]
pub trait Provider: Send + Sync {
    async fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError>;
}

pub struct Gateway {
    profile: ProviderProfile,
    provider: Arc<dyn Provider>,
    permits: Semaphore,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("profile", &self.profile).finish()
    }
}

impl Gateway {
    pub fn new(profile: ProviderProfile, provider: Arc<dyn Provider>) -> Result<Self, GatewayError> {
        profile.validate()?;
        let permits = Semaphore::new(profile.max_parallel);
        Ok(Self {
            profile,
            provider,
            permits,
        })
    }

    pub fn profile(&self) -> &ProviderProfile {
        &self.profile
    }

    /// Sends `request`, retrying transient failures up to `retry_max` times.
    /// The concurrency permit is held only while an attempt is in flight.
    pub async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let mut attempt = 0u32;
        loop {
            let started = Instant::now();
            let outcome = {
                let _permit = self.permits.acquire().await.expect("semaphore never closed");
                self.provider.send(request).await
            };
            let err = match outcome {
                Ok(mut resp) => {
                    if resp.latency_ms == 0 {
                        resp.latency_ms = started.elapsed().as_millis() as u64;
                    }
                    return Ok(resp);
                }
                Err(e) => e,
            };
            if !err.is_transient() {
                return Err(match err {
                    ProviderError::AuthMissing(env_var) => GatewayError::AuthMissing { env_var },
                    ProviderError::Malformed(m) => GatewayError::MalformedProviderReply(m),
                    ProviderError::FixtureMiss { key, context } => {
                        GatewayError::FixtureMiss { key, context }
                    }
                    ProviderError::Rejected { status, body } => GatewayError::Rejected { status, body },
                    other => unreachable!("transient error {other:?} classified as permanent"),
                });
            }
            if attempt >= self.profile.retry_max {
                return Err(GatewayError::RetriesExhausted {
                    attempts: attempt + 1,
                    last: err.to_string(),
                });
            }
            let delay = self.profile.backoff_delay(attempt, &mut rand::thread_rng());
            tracing::debug!(profile = %self.profile.name, attempt, ?delay, error = %err, "retrying");
            tokio::time::sleep(delay).await;
            attempt += 1;
        }
    }
}

/// Routes requests to a gateway by `ModelRef::provider`.
#[derive(Debug, Clone, Default)]
pub struct GatewayPool {
    by_provider: BTreeMap<String, Arc<Gateway>>,
    fallback: Option<Arc<Gateway>>,
}

impl GatewayPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sends every request to one gateway regardless of provider name.
    pub fn single(gateway: Arc<Gateway>) -> Self {
        Self {
            by_provider: BTreeMap::new(),
            fallback: Some(gateway),
        }
    }

    pub fn insert(&mut self, provider: impl Into<String>, gateway: Arc<Gateway>) {
        self.by_provider.insert(provider.into(), gateway);
    }

    pub fn route(&self, model: &ModelRef) -> Result<&Arc<Gateway>, GatewayError> {
        self.by_provider
            .get(&model.provider)
            .or(self.fallback.as_ref())
            .ok_or_else(|| GatewayError::UnknownProvider(model.provider.clone()))
    }

    pub async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        self.route(&request.model)?.complete(request).await
    }

    /// Fails fast when the profile serving `model` needs an API key that is
    /// not set.
    pub fn check_auth(&self, model: &ModelRef) -> Result<(), GatewayError> {
        let var = &self.route(model)?.profile().auth_env_var;
        if var.is_empty() || std::env::var(var).is_ok_and(|v| !v.trim().is_empty()) {
            Ok(())
        } else {
            Err(GatewayError::AuthMissing { env_var: var.clone() })
        }
    }
}
