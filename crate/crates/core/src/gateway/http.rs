use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{CompletionRequest, CompletionResponse, Provider, ProviderError, ProviderProfile};

/// OpenAI-compatible `/chat/completions` client. Each request carries a
/// single user message holding the prompt text.
#[derive(Debug, Clone)]
pub struct OpenAiChatProvider {
    client: reqwest::Client,
    endpoint_url: String,
    auth_env_var: String,
}

impl OpenAiChatProvider {
    pub fn new(profile: &ProviderProfile) -> Result<Self, ProviderError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(profile.timeout_ms))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint_url: profile.endpoint_url.clone(),
            auth_env_var: profile.auth_env_var.clone(),
        })
    }

    fn api_key(&self) -> Result<Option<String>, ProviderError> {
        if self.auth_env_var.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.auth_env_var) {
            Ok(v) if !v.trim().is_empty() => Ok(Some(v)),
            _ => Err(ProviderError::AuthMissing(self.auth_env_var.clone())),
        }
    }

    pub(crate) fn body(request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": request.model.model_name,
            "messages": [{"role": "user", "content": request.prompt.text}],
            "max_tokens": request.max_output_tokens,
        });
        if let Some(t) = request.temperature {
            body["temperature"] = json!(t);
        }
        body
    }
}

fn parse_reply(v: &Value) -> Result<(String, BTreeMap<String, Value>), ProviderError> {
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| ProviderError::Malformed("reply has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::Malformed("choice has no message content".into()))?
        .to_string();
    let mut meta = BTreeMap::new();
    for key in ["id", "model", "usage"] {
        if let Some(x) = v.get(key) {
            meta.insert(key.to_string(), x.clone());
        }
    }
    if let Some(x) = choice.get("finish_reason") {
        meta.insert("finish_reason".into(), x.clone());
    }
    Ok((text, meta))
}

#[async_trait]
impl Provider for OpenAiChatProvider {
    async fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        let key = self.api_key()?;
        let started = Instant::now();
        let mut req = self.client.post(&self.endpoint_url).json(&Self::body(request));
        if let Some(key) = key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Transport(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        match status {
            429 => return Err(ProviderError::RateLimited),
            408 => return Err(ProviderError::Timeout),
            500..=599 => return Err(ProviderError::Server(status)),
            200..=299 => {}
            _ => {
                let body = resp.text().await.unwrap_or_default();
                return Err(ProviderError::Rejected { status, body });
            }
        }
        let value: Value = resp.json().await.map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Malformed(e.to_string())
            }
        })?;
        let (text, provider_meta) = parse_reply(&value)?;
        Ok(CompletionResponse {
            text,
            latency_ms: started.elapsed().as_millis() as u64,
            provider_meta,
        })
    }
}
