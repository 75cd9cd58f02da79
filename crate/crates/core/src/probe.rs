//! Yes/no probing of links.
//!
//! Each unique link of a generator is asked once per probe kind per
//! evaluator, in isolation and without chain context. Raw answers are cached
//! by content hash; verdicts are always re-derived from the raw text.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::sync::LazyLock;

use futures::stream::{self, StreamExt};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::{PairIndex, PairKey};
use crate::gateway::{CompletionRequest, GatewayError, GatewayPool};
use crate::model::{IntermediatePair, ModelRef, ProbeKind, Verdict};
use crate::prompt::{render_probe_prompt, TemplateId};
use crate::store::cache_key;

static THINK_BLOCK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)^\s*<think>.*?</think>").expect("valid regex"));

/// Maps a raw answer to a verdict: the first word decides, `yes` is causal,
/// `no` is non-causal, anything else is invalid. A leading `<think>` block
/// emitted by reasoning models is ignored.
pub fn parse_verdict(raw: &str) -> Verdict {
    let body = THINK_BLOCK.replace(raw, "");
    let lowered = body.to_lowercase();
    let first = lowered
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("");
    match first {
        "yes" => Verdict::Causal,
        "no" => Verdict::NonCausal,
        _ => Verdict::Invalid,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub pair_key: PairKey,
    pub probe: ProbeKind,
    pub evaluator_model: ModelRef,
    pub verdict: Verdict,
    pub raw_answer: String,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("pair index is empty")]
    EmptyIndex,
    #[error("{} probe(s) failed", failed.len())]
    PartialBatch { failed: Vec<BatchFailure> },
    #[error("probe cache I/O: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub pair_key: PairKey,
    pub probe: ProbeKind,
    pub error: String,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    raw_answer: String,
}

/// Raw answers keyed by [`cache_key`]. Optionally backed by an append-only
/// JSONL file; inserts of an existing key are no-ops.
#[derive(Debug, Default)]
pub struct ProbeCache {
    entries: RwLock<HashMap<String, String>>,
    file: Option<Mutex<File>>,
}

impl ProbeCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                // A torn final line from a crash is skipped, not fatal.
                if let Ok(entry) = serde_json::from_str::<CacheLine>(&line) {
                    entries.entry(entry.key).or_insert(entry.raw_answer);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: RwLock::new(entries),
            file: Some(Mutex::new(file)),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().expect("cache lock poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns false when the key was already present.
    pub fn insert(&self, key: &str, raw_answer: &str) -> std::io::Result<bool> {
        let mut entries = self.entries.write().expect("cache lock poisoned");
        if entries.contains_key(key) {
            return Ok(false);
        }
        if let Some(file) = &self.file {
            let line = serde_json::to_string(&CacheLine {
                key: key.to_string(),
                raw_answer: raw_answer.to_string(),
            })
            .expect("cache line serializes");
            let mut f = file.lock().expect("cache file lock poisoned");
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        entries.insert(key.to_string(), raw_answer.to_string());
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    /// Results in index order, then probe-kind order.
    pub results: Vec<ProbeResult>,
    pub failures: Vec<BatchFailure>,
}

impl BatchOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn into_complete(self) -> Result<Vec<ProbeResult>, ProbeError> {
        if self.failures.is_empty() {
            Ok(self.results)
        } else {
            Err(ProbeError::PartialBatch {
                failed: self.failures,
            })
        }
    }
}

pub struct ProbeEngine {
    gateways: Arc<GatewayPool>,
    cache: Arc<ProbeCache>,
    max_output_tokens: u32,
}

impl ProbeEngine {
    pub fn new(gateways: Arc<GatewayPool>, cache: Arc<ProbeCache>, max_output_tokens: u32) -> Self {
        Self {
            gateways,
            cache,
            max_output_tokens: max_output_tokens.max(1),
        }
    }

    pub fn cache(&self) -> &ProbeCache {
        &self.cache
    }

    pub async fn run_probe(
        &self,
        evaluator: &ModelRef,
        pair: &IntermediatePair,
        kind: ProbeKind,
    ) -> Result<ProbeResult, ProbeError> {
        let key = cache_key(
            evaluator,
            &TemplateId::for_probe(kind).version(),
            &pair.cause_event.normalized,
            &pair.effect_event.normalized,
            kind,
        );
        let (raw_answer, cached) = match self.cache.get(&key) {
            Some(raw) => (raw, true),
            None => {
                let request = CompletionRequest {
                    model: evaluator.clone(),
                    prompt: render_probe_prompt(kind, pair),
                    max_output_tokens: self.max_output_tokens,
                    temperature: Some(evaluator.temperature),
                };
                let resp = self.gateways.complete(&request).await?;
                self.cache
                    .insert(&key, &resp.text)
                    .map_err(|e| ProbeError::Cache(e.to_string()))?;
                (resp.text, false)
            }
        };
        Ok(ProbeResult {
            pair_key: PairKey::of(pair),
            probe: kind,
            evaluator_model: evaluator.clone(),
            verdict: parse_verdict(&raw_answer),
            raw_answer,
            cached,
        })
    }

    /// Probes every unique link of `index` with every kind in `kinds`, at
    /// most `max_parallel` at a time. The outcome does not depend on
    /// completion order.
    pub async fn run_probe_batch(
        &self,
        evaluator: &ModelRef,
        index: &PairIndex,
        kinds: &BTreeSet<ProbeKind>,
        max_parallel: usize,
    ) -> Result<BatchOutcome, ProbeError> {
        if index.is_empty() {
            return Err(ProbeError::EmptyIndex);
        }
        let jobs: Vec<(usize, IntermediatePair, ProbeKind)> = index
            .iter()
            .flat_map(|(record, sites)| {
                let pair = record.as_pair(&sites[0]);
                kinds.iter().map(move |k| (pair.clone(), *k))
            })
            .enumerate()
            .map(|(i, (pair, kind))| (i, pair, kind))
            .collect();

        let mut done: Vec<(usize, Result<ProbeResult, BatchFailure>)> = stream::iter(jobs)
            .map(|(i, pair, kind)| async move {
                let outcome = self.run_probe(evaluator, &pair, kind).await.map_err(|e| BatchFailure {
                    pair_key: PairKey::of(&pair),
                    probe: kind,
                    error: e.to_string(),
                });
                (i, outcome)
            })
            .buffer_unordered(max_parallel.max(1))
            .collect()
            .await;
        done.sort_by_key(|(i, _)| *i);

        let mut outcome = BatchOutcome {
            results: Vec::with_capacity(done.len()),
            failures: Vec::new(),
        };
        for (_, r) in done {
            match r {
                Ok(result) => outcome.results.push(result),
                Err(failure) => outcome.failures.push(failure),
            }
        }
        Ok(outcome)
    }
}

fn kind_slot(kind: ProbeKind) -> usize {
    match kind {
        ProbeKind::A1_Active => 0,
        ProbeKind::A2_ReversedActive => 1,
        ProbeKind::A1_Passive => 2,
        ProbeKind::A2_ReversedPassive => 3,
    }
}

/// Verdicts of one evaluator, looked up by link and probe kind.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerdictTable {
    verdicts: HashMap<PairKey, [Option<Verdict>; 4]>,
}

impl VerdictTable {
    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a ProbeResult>) -> Self {
        let mut table = Self::default();
        for r in results {
            table.insert(r.pair_key.clone(), r.probe, r.verdict);
        }
        table
    }

    pub fn insert(&mut self, key: PairKey, kind: ProbeKind, verdict: Verdict) {
        self.verdicts.entry(key).or_default()[kind_slot(kind)] = Some(verdict);
    }

    pub fn get(&self, key: &PairKey, kind: ProbeKind) -> Option<Verdict> {
        self.verdicts.get(key).and_then(|slots| slots[kind_slot(kind)])
    }

    /// Number of links with at least one verdict.
    pub fn len(&self) -> usize {
        self.verdicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty()
    }
}
