use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;

use super::{CompletionRequest, CompletionResponse, Provider, ProviderError};

type Script = dyn Fn(&CompletionRequest) -> Result<String, ProviderError> + Send + Sync;

/// Answers requests with a function of the request, counting calls.
pub struct ScriptedProvider {
    script: Box<Script>,
    calls: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new(script: impl Fn(&CompletionRequest) -> Result<String, ProviderError> + Send + Sync + 'static) -> Self {
        Self {
            script: Box::new(script),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Provider for ScriptedProvider {
    async fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.script)(request).map(|text| CompletionResponse {
            text,
            latency_ms: 0,
            provider_meta: BTreeMap::new(),
        })
    }
}
