//! Provider profiles and call settings loaded from TOML.
//!
//! ```toml
//! [[provider]]
//! name = "openai"
//! endpoint_url = "https://api.openai.com/v1/chat/completions"
//! auth_env_var = "OPENAI_API_KEY"
//! max_parallel = 8
//! retry_max = 5
//! backoff_base_ms = 500
//!
//! [generation]
//! max_output_tokens = 2048
//!
//! [probe]
//! max_output_tokens = 16
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    Gateway, GatewayError, GatewayPool, OpenAiChatProvider, Provider, ProviderProfile, RecordingProvider,
    ReplayFixture, ReplayProvider,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSettings {
    #[serde(default = "default_generation_tokens")]
    pub max_output_tokens: u32,
    /// `None` keeps the provider's default sampling temperature.
    #[serde(default)]
    pub temperature: Option<f64>,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            max_output_tokens: default_generation_tokens(),
            temperature: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSettings {
    #[serde(default = "default_probe_tokens")]
    pub max_output_tokens: u32,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            max_output_tokens: default_probe_tokens(),
        }
    }
}

fn default_generation_tokens() -> u32 {
    2048
}

fn default_probe_tokens() -> u32 {
    16
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default, rename = "provider")]
    pub providers: Vec<ProviderProfile>,
    #[serde(default)]
    pub generation: GenerationSettings,
    #[serde(default)]
    pub probe: ProbeSettings,
}

impl HarnessConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Invalid {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        let mut names = std::collections::BTreeSet::new();
        for p in &config.providers {
            p.validate()?;
            if !names.insert(p.name.as_str()) {
                return Err(ConfigError::Invalid {
                    path: path.to_string(),
                    message: format!("duplicate provider {:?}", p.name),
                });
            }
        }
        if config.generation.max_output_tokens == 0 || config.probe.max_output_tokens == 0 {
            return Err(ConfigError::Invalid {
                path: path.to_string(),
                message: "max_output_tokens must be positive".into(),
            });
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// One HTTP gateway per profile, routed by provider name. `max_parallel`
    /// lowers every profile's cap when given.
    pub fn live_pool(&self, max_parallel: Option<usize>) -> Result<GatewayPool, ConfigError> {
        self.pool_with(max_parallel, |p| p)
    }

    /// Like [`live_pool`](Self::live_pool), appending every reply to a fixture file.
    pub fn recording_pool(&self, max_parallel: Option<usize>, fixtures: &Path) -> Result<GatewayPool, ConfigError> {
        let io = |source| ConfigError::Io {
            path: fixtures.display().to_string(),
            source,
        };
        let recorder = RecordingProvider::new(Arc::new(ReplayProvider::new(Arc::new(ReplayFixture::new()))), fixtures)
            .map_err(io)?;
        self.pool_with(max_parallel, |p| Arc::new(recorder.sharing(p)))
    }

    fn pool_with(
        &self,
        max_parallel: Option<usize>,
        wrap: impl Fn(Arc<dyn Provider>) -> Arc<dyn Provider>,
    ) -> Result<GatewayPool, ConfigError> {
        let mut pool = GatewayPool::new();
        for profile in &self.providers {
            let mut profile = profile.clone();
            if let Some(cap) = max_parallel {
                profile.max_parallel = profile.max_parallel.min(cap.max(1));
            }
            let provider = wrap(Arc::new(OpenAiChatProvider::new(&profile).map_err(|e| ConfigError::Invalid {
                path: profile.name.clone(),
                message: e.to_string(),
            })?));
            pool.insert(profile.name.clone(), Arc::new(Gateway::new(profile, provider)?));
        }
        Ok(pool)
    }
}

/// A pool that answers every request from the fixture file.
pub fn replay_pool(fixtures: &Path, max_parallel: usize) -> Result<GatewayPool, ConfigError> {
    let fixture = ReplayFixture::load(fixtures).map_err(|source| ConfigError::Io {
        path: fixtures.display().to_string(),
        source,
    })?;
    let provider = Arc::new(ReplayProvider::new(Arc::new(fixture)));
    let gateway = Gateway::new(ProviderProfile::replay(max_parallel), provider)?;
    Ok(GatewayPool::single(Arc::new(gateway)))
}
