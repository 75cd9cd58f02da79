use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionRequest, CompletionResponse, GatewayError, Provider, ProviderError};
use crate::prompt::TemplateId;

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model_name: &'a str,
    template_id: TemplateId,
    template_version: String,
    slots: &'a BTreeMap<String, String>,
}

/// Replay key: SHA-256 over model name, template id and version, and slot values.
pub fn fixture_key(request: &CompletionRequest) -> String {
    let material = KeyMaterial {
        model_name: &request.model.model_name,
        template_id: request.prompt.template_id,
        template_version: request.prompt.template_id.version(),
        slots: &request.prompt.slots,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(&bytes))
}

fn describe(request: &CompletionRequest) -> String {
    let slots = request
        .prompt
        .slots
        .iter()
        .map(|(k, v)| format!("{k}={v:?}"))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "model {}, template {}, {}",
        request.model.model_name, request.prompt.template_id, slots
    )
}

/// One line of a fixture file. Only `key` and `text` are read back; the
/// other fields document what was asked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub key: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<TemplateId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<BTreeMap<String, String>>,
}

impl FixtureEntry {
    pub fn for_request(request: &CompletionRequest, text: impl Into<String>) -> Self {
        Self {
            key: fixture_key(request),
            text: text.into(),
            model_name: Some(request.model.model_name.clone()),
            template_id: Some(request.prompt.template_id),
            slots: Some(request.prompt.slots.clone()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReplayFixture {
    entries: HashMap<String, String>,
}

impl ReplayFixture {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a `{key, text}` JSONL file. Later lines override earlier ones.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut fixture = Self::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), n + 1),
                )
            })?;
            fixture.entries.insert(entry.key, entry.text);
        }
        Ok(fixture)
    }

    pub fn insert(&mut self, entry: FixtureEntry) {
        self.entries.insert(entry.key, entry.text);
    }

    /// Records `text` as the answer to `request`.
    pub fn record(&mut self, request: &CompletionRequest, text: impl Into<String>) {
        self.entries.insert(fixture_key(request), text.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Looks `request` up in the fixture.
pub fn replay_complete(
    fixture: &ReplayFixture,
    request: &CompletionRequest,
) -> Result<CompletionResponse, GatewayError> {
    let key = fixture_key(request);
    match fixture.get(&key) {
        Some(text) => Ok(CompletionResponse {
            text: text.to_string(),
            latency_ms: 0,
            provider_meta: BTreeMap::from([("replay".to_string(), serde_json::Value::Bool(true))]),
        }),
        None => Err(GatewayError::FixtureMiss {
            context: describe(request),
            key,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct ReplayProvider {
    fixture: Arc<ReplayFixture>,
}

impl ReplayProvider {
    pub fn new(fixture: Arc<ReplayFixture>) -> Self {
        Self { fixture }
    }
}

#[async_trait]
impl Provider for ReplayProvider {
    async fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        replay_complete(&self.fixture, request).map_err(|e| match e {
            GatewayError::FixtureMiss { key, context } => ProviderError::FixtureMiss { key, context },
            other => ProviderError::Malformed(other.to_string()),
        })
    }
}

/// Forwards to an inner provider and appends every successful reply to a
/// fixture file, once per key.
pub struct RecordingProvider {
    inner: Arc<dyn Provider>,
    path: PathBuf,
    state: Arc<Mutex<(File, HashSet<String>)>>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn Provider>, path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        let mut seen = HashSet::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                if let Ok(entry) = serde_json::from_str::<FixtureEntry>(&line?) {
                    seen.insert(entry.key);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            inner,
            path,
            state: Arc::new(Mutex::new((file, seen))),
        })
    }

    /// Records `inner`'s replies into the same file as `self`.
    pub fn sharing(&self, inner: Arc<dyn Provider>) -> Self {
        Self {
            inner,
            path: self.path.clone(),
            state: Arc::clone(&self.state),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[async_trait]
impl Provider for RecordingProvider {
    async fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        let resp = self.inner.send(request).await?;
        let entry = FixtureEntry::for_request(request, resp.text.clone());
        let mut guard = self.state.lock().expect("recorder lock poisoned");
        let (file, seen) = &mut *guard;
        if seen.insert(entry.key.clone()) {
            let line = serde_json::to_string(&entry).expect("fixture entry serializes");
            writeln!(file, "{line}").map_err(|e| ProviderError::Transport(e.to_string()))?;
            file.flush().map_err(|e| ProviderError::Transport(e.to_string()))?;
        }
        Ok(resp)
    }
}
