//! End-to-end runs: generate, parse, decompose, probe and metrics over one
//! store, resumable stage by stage.
//!
//! Every stage reads its inputs back from the store and appends only records
//! it has not written before, so rerunning an interrupted stage never
//! duplicates rows. Record order is fixed by configuration order and input
//! order, never by completion order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{GenerationSettings, ProbeSettings};
use crate::decompose::{build_pair_index, PairIndex, PairKey};
use crate::gateway::{CompletionRequest, GatewayError, GatewayPool};
use crate::input::{load_ce_pairs, InputError};
use crate::model::{CEPair, CausalChain, ModelRef, ProbeKind, Verdict};
use crate::parser::{parse_generation_output, ParseError, ParsedChainSet};
use crate::probe::{ProbeCache, ProbeEngine};
use crate::prompt::{render_generation_prompt, template_versions, TemplateId};
use crate::report::{build_report, write_reports, ReportInputs};
use crate::store::{content_digest, Loaded, RecordKind, RunManifest, Stage, StageStatus, Store, StoreError};

/// Everything that determines a run's results. Its digest names the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub generators: Vec<ModelRef>,
    pub evaluators: Vec<ModelRef>,
    pub probes: BTreeSet<ProbeKind>,
    pub seed: u64,
    /// Probe anchor-repaired chains too.
    #[serde(default)]
    pub include_repaired: bool,
    #[serde(default)]
    pub generation: GenerationSettings,
    #[serde(default)]
    pub probe: ProbeSettings,
}

impl RunSettings {
    pub fn new(generators: Vec<ModelRef>, evaluators: Vec<ModelRef>) -> Self {
        Self {
            generators,
            evaluators,
            probes: ProbeKind::ALL.into_iter().collect(),
            seed: 0,
            include_repaired: false,
            generation: GenerationSettings::default(),
            probe: ProbeSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.generators.is_empty() {
            return invalid("at least one generator model is required");
        }
        if self.evaluators.is_empty() {
            return invalid("at least one evaluator model is required");
        }
        if self.probes.is_empty() {
            return invalid("at least one probe kind is required");
        }
        for (what, list) in [("generator", &self.generators), ("evaluator", &self.evaluators)] {
            let labels: BTreeSet<String> = list.iter().map(ModelRef::label).collect();
            if labels.len() != list.len() {
                return Err(PipelineError::InvalidConfig(format!("duplicate {what} model")));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        content_digest(&serde_json::to_vec(self).expect("settings serialize"))
    }

    /// Whether a chain is decomposed and probed.
    pub fn is_eligible(&self, chain: &CausalChain) -> bool {
        chain.is_structurally_valid() && (self.include_repaired || !chain.is_anchor_repaired())
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: PathBuf,
    pub store_root: PathBuf,
    pub settings: RunSettings,
    pub max_parallel: usize,
    pub allow_partial: bool,
    /// Overrides the digest-derived run id.
    pub run_id: Option<String>,
}

/// One raw generation reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub ce_pair_id: String,
    pub generator_model: ModelRef,
    pub template_version: String,
    pub raw_output: String,
}

/// The link index of one generator's eligible chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsRecord {
    pub generator_model: ModelRef,
    pub index: PairIndex,
}

/// One probe answer for one unique link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub generator_model: ModelRef,
    pub evaluator_model: ModelRef,
    pub pair_key: PairKey,
    pub probe: ProbeKind,
    pub verdict: Verdict,
    pub raw_answer: String,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("run {run_id} exists with a different configuration")]
    ConfigMismatch { run_id: String },
    #[error("stage {stage:?} needs stage {requires:?} to be completed first")]
    PrerequisiteMissing { stage: Stage, requires: Stage },
    #[error("stage {stage:?} failed: {message}")]
    StageFailed { stage: Stage, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Some stage finished with missing records.
    pub partial: bool,
}

/// What a stage left undone, if anything.
type StageResult = Result<Option<String>, PipelineError>;

fn warn_diagnostics<T>(loaded: &Loaded<T>, what: &str) {
    for d in &loaded.diagnostics {
        tracing::warn!(file = what, line = d.line, "skipping malformed record: {}", d.message);
    }
}

fn summarize_failures(failed: usize, total: usize, first: Option<String>) -> Option<String> {
    (failed > 0).then(|| {
        format!(
            "{failed} of {total} requests failed; first: {}",
            first.unwrap_or_default()
        )
    })
}

pub struct Pipeline {
    config: RunConfig,
    store: Store,
    pool: Arc<GatewayPool>,
    cache: Arc<ProbeCache>,
    ce_pairs: Vec<CEPair>,
    input_digest: String,
    run_id: String,
    clock: fn() -> DateTime<Utc>,
}

impl Pipeline {
    pub fn new(config: RunConfig, pool: Arc<GatewayPool>) -> Result<Self, PipelineError> {
        config.settings.validate()?;
        if config.max_parallel == 0 {
            return Err(PipelineError::InvalidConfig("max_parallel must be at least 1".into()));
        }
        let (ce_pairs, bytes) = load_ce_pairs(&config.input)?;
        let input_digest = content_digest(&bytes);
        let config_digest = config.settings.digest();
        let run_id = config.run_id.clone().unwrap_or_else(|| {
            let both = content_digest(format!("{config_digest}\n{input_digest}").as_bytes());
            format!("run-{}", &both[..12])
        });
        let store = Store::open(&config.store_root)?;
        let cache = ProbeCache::open(&store.probe_cache_path()).map_err(|source| StoreError::Io {
            path: store.probe_cache_path(),
            source,
        })?;
        Ok(Self {
            config,
            store,
            pool,
            cache: Arc::new(cache),
            ce_pairs,
            input_digest,
            run_id,
            clock: Utc::now,
        })
    }

    /// Fixes the manifest creation time, for byte-stable manifests.
    pub fn with_clock(mut self, clock: fn() -> DateTime<Utc>) -> Self {
        self.clock = clock;
        self
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn settings(&self) -> &RunSettings {
        &self.config.settings
    }

    fn open_manifest(&self) -> Result<RunManifest, PipelineError> {
        let digest = self.settings().digest();
        if self.store.run_exists(&self.run_id) {
            let manifest = self.store.load_manifest(&self.run_id)?;
            if manifest.config_digest != digest || manifest.input_digest != self.input_digest {
                return Err(PipelineError::ConfigMismatch {
                    run_id: self.run_id.clone(),
                });
            }
            return Ok(manifest);
        }
        let mut models = self.settings().generators.clone();
        for e in &self.settings().evaluators {
            if !models.iter().any(|m| m.label() == e.label()) {
                models.push(e.clone());
            }
        }
        let manifest = RunManifest {
            run_id: self.run_id.clone(),
            created_at: (self.clock)(),
            config_digest: digest,
            template_versions: template_versions(),
            input_digest: self.input_digest.clone(),
            model_list: models,
            seed: self.settings().seed,
            stages: Vec::new(),
        };
        self.store.create_run(&manifest)?;
        let settings = serde_json::to_string_pretty(self.settings()).expect("settings serialize");
        std::fs::write(self.store.run_dir(&self.run_id).join("settings.json"), settings + "\n").map_err(
            |source| StoreError::Io {
                path: self.store.run_dir(&self.run_id).join("settings.json"),
                source,
            },
        )?;
        Ok(manifest)
    }

    pub async fn run_all(&self) -> Result<RunOutcome, PipelineError> {
        self.run_stages(&Stage::PIPELINE).await
    }

    /// Runs the given stages in pipeline order. Completed stages are skipped.
    pub async fn run_stages(&self, stages: &[Stage]) -> Result<RunOutcome, PipelineError> {
        let mut manifest = self.open_manifest()?;
        let wanted: BTreeSet<Stage> = stages.iter().copied().collect();
        for (i, &stage) in Stage::PIPELINE.iter().enumerate() {
            if !wanted.contains(&stage) || manifest.is_completed(stage) {
                continue;
            }
            if i > 0 {
                let prev = Stage::PIPELINE[i - 1];
                let ok = match manifest.stage_status(prev) {
                    Some(StageStatus::Completed) => true,
                    Some(StageStatus::Partial) => self.config.allow_partial,
                    _ => false,
                };
                if !ok {
                    return Err(PipelineError::PrerequisiteMissing { stage, requires: prev });
                }
            }
            tracing::info!(run = %self.run_id, ?stage, "running stage");
            let result = match stage {
                Stage::Ingest => self.ingest(),
                Stage::Generate => self.generate().await,
                Stage::Parse => self.parse(),
                Stage::Decompose => self.decompose(),
                Stage::Probe => self.probe().await,
                Stage::Metrics => self.metrics(&manifest),
            };
            // Later stages were derived from the previous state of this one.
            manifest.stages.retain(|s| s.stage <= stage);
            match result {
                Ok(None) => manifest.set_stage(stage, StageStatus::Completed, None),
                Ok(Some(missing)) if self.config.allow_partial => {
                    tracing::warn!(?stage, "partial: {missing}");
                    manifest.set_stage(stage, StageStatus::Partial, Some(missing));
                }
                Ok(Some(missing)) => {
                    manifest.set_stage(stage, StageStatus::Failed, Some(missing.clone()));
                    self.store.write_manifest(&manifest)?;
                    return Err(PipelineError::StageFailed { stage, message: missing });
                }
                Err(e) => {
                    manifest.set_stage(stage, StageStatus::Failed, Some(e.to_string()));
                    self.store.write_manifest(&manifest)?;
                    return Err(match e {
                        e @ PipelineError::Gateway(_) => e,
                        other => PipelineError::StageFailed {
                            stage,
                            message: other.to_string(),
                        },
                    });
                }
            }
            self.store.write_manifest(&manifest)?;
        }
        let partial = manifest.stages.iter().any(|s| s.status == StageStatus::Partial);
        Ok(RunOutcome { manifest, partial })
    }

    fn ingest(&self) -> StageResult {
        let existing: BTreeSet<String> = self
            .store
            .load_records::<CEPair>(&self.run_id, RecordKind::CePairs)?
            .into_values()
            .into_iter()
            .map(|c| c.id)
            .collect();
        let new: Vec<&CEPair> = self.ce_pairs.iter().filter(|c| !existing.contains(&c.id)).collect();
        self.store.append_records(&self.run_id, RecordKind::CePairs, &new)?;
        Ok(None)
    }

    fn load_generations(&self) -> Result<BTreeMap<(String, String), GenerationRecord>, PipelineError> {
        let loaded = self
            .store
            .load_records::<GenerationRecord>(&self.run_id, RecordKind::Generations)?;
        warn_diagnostics(&loaded, "generations");
        let mut map = BTreeMap::new();
        for g in loaded.into_values() {
            map.entry((g.ce_pair_id.clone(), g.generator_model.label())).or_insert(g);
        }
        Ok(map)
    }

    async fn generate(&self) -> StageResult {
        let done = self.load_generations()?;
        let settings = self.settings();
        let (mut failed, mut total, mut first_error) = (0, 0, None);
        for generator in &settings.generators {
            self.pool.check_auth(generator)?;
            let todo: Vec<(usize, &CEPair)> = self
                .ce_pairs
                .iter()
                .enumerate()
                .filter(|(_, ce)| !done.contains_key(&(ce.id.clone(), generator.label())))
                .collect();
            total += todo.len();
            let mut replies: Vec<(usize, Result<String, GatewayError>)> = stream::iter(todo)
                .map(|(i, ce)| async move {
                    let request = CompletionRequest {
                        model: generator.clone(),
                        prompt: render_generation_prompt(ce),
                        max_output_tokens: settings.generation.max_output_tokens,
                        temperature: settings.generation.temperature,
                    };
                    (i, self.pool.complete(&request).await.map(|r| r.text))
                })
                .buffer_unordered(self.config.max_parallel)
                .collect()
                .await;
            replies.sort_by_key(|(i, _)| *i);
            let mut records = Vec::new();
            for (i, reply) in replies {
                match reply {
                    Ok(text) => records.push(GenerationRecord {
                        ce_pair_id: self.ce_pairs[i].id.clone(),
                        generator_model: generator.clone(),
                        template_version: TemplateId::Gen.version(),
                        raw_output: text,
                    }),
                    Err(e @ GatewayError::AuthMissing { .. }) => return Err(e.into()),
                    Err(e) => {
                        failed += 1;
                        tracing::warn!(ce = %self.ce_pairs[i].id, model = %generator.label(), "generation failed: {e}");
                        first_error.get_or_insert_with(|| e.to_string());
                    }
                }
            }
            self.store.append_records(&self.run_id, RecordKind::Generations, &records)?;
        }
        Ok(summarize_failures(failed, total, first_error))
    }

    /// Latest chain set per `(CE pair, generator)`.
    pub fn load_chain_sets(&self) -> Result<BTreeMap<(String, String), ParsedChainSet>, PipelineError> {
        load_chain_sets(&self.store, &self.run_id)
    }

    fn parse(&self) -> StageResult {
        let generations = self.load_generations()?;
        let parsed = self.load_chain_sets()?;
        let mut new = Vec::new();
        for generator in &self.settings().generators {
            for ce in &self.ce_pairs {
                let key = (ce.id.clone(), generator.label());
                if parsed.contains_key(&key) {
                    continue;
                }
                let Some(g) = generations.get(&key) else { continue };
                let set = match parse_generation_output(&g.raw_output, ce, generator) {
                    Ok(set) => set,
                    Err(ParseError::NoChainsFound { issues }) => ParsedChainSet {
                        ce_pair_id: ce.id.clone(),
                        generator_model: generator.clone(),
                        chains: Vec::new(),
                        issues,
                        n_chains: 0,
                    },
                };
                new.push(set);
            }
        }
        self.store.append_records(&self.run_id, RecordKind::Chains, &new)?;
        Ok(None)
    }

    /// Eligible chains of one generator, in input order.
    fn eligible_chains<'a>(
        &self,
        sets: &'a BTreeMap<(String, String), ParsedChainSet>,
        generator: &ModelRef,
    ) -> Vec<&'a CausalChain> {
        self.ce_pairs
            .iter()
            .filter_map(|ce| sets.get(&(ce.id.clone(), generator.label())))
            .flat_map(|s| s.chains.iter())
            .filter(|c| self.settings().is_eligible(c))
            .collect()
    }

    fn decompose(&self) -> StageResult {
        let sets = self.load_chain_sets()?;
        let stored = load_pair_indexes(&self.store, &self.run_id)?;
        let mut new = Vec::new();
        for generator in &self.settings().generators {
            let index = build_pair_index(self.eligible_chains(&sets, generator));
            if stored.get(&generator.label()) != Some(&index) {
                new.push(PairsRecord {
                    generator_model: generator.clone(),
                    index,
                });
            }
        }
        self.store.append_records(&self.run_id, RecordKind::Pairs, &new)?;
        Ok(None)
    }

    async fn probe(&self) -> StageResult {
        let indexes = load_pair_indexes(&self.store, &self.run_id)?;
        let loaded = self.store.load_records::<VerdictRecord>(&self.run_id, RecordKind::Verdicts)?;
        warn_diagnostics(&loaded, "verdicts");
        let stored: BTreeSet<(String, String, PairKey, ProbeKind)> = loaded
            .into_values()
            .into_iter()
            .map(|v| (v.generator_model.label(), v.evaluator_model.label(), v.pair_key, v.probe))
            .collect();
        let engine = ProbeEngine::new(
            Arc::clone(&self.pool),
            Arc::clone(&self.cache),
            self.settings().probe.max_output_tokens,
        );
        let (mut failed, mut total, mut first_error) = (0, 0, None);
        for generator in &self.settings().generators {
            let Some(index) = indexes.get(&generator.label()) else { continue };
            if index.is_empty() {
                continue;
            }
            for evaluator in &self.settings().evaluators {
                self.pool.check_auth(evaluator)?;
                let outcome = engine
                    .run_probe_batch(evaluator, index, &self.settings().probes, self.config.max_parallel)
                    .await
                    .map_err(|e| PipelineError::StageFailed {
                        stage: Stage::Probe,
                        message: e.to_string(),
                    })?;
                total += outcome.results.len() + outcome.failures.len();
                failed += outcome.failures.len();
                if let Some(f) = outcome.failures.first() {
                    first_error.get_or_insert_with(|| format!("{} ({}): {}", f.pair_key, f.probe.as_str(), f.error));
                }
                let records: Vec<VerdictRecord> = outcome
                    .results
                    .into_iter()
                    .filter(|r| {
                        !stored.contains(&(generator.label(), evaluator.label(), r.pair_key.clone(), r.probe))
                    })
                    .map(|r| VerdictRecord {
                        generator_model: generator.clone(),
                        evaluator_model: evaluator.clone(),
                        pair_key: r.pair_key,
                        probe: r.probe,
                        verdict: r.verdict,
                        raw_answer: r.raw_answer,
                    })
                    .collect();
                self.store.append_records(&self.run_id, RecordKind::Verdicts, &records)?;
            }
        }
        Ok(summarize_failures(failed, total, first_error))
    }

    fn metrics(&self, manifest: &RunManifest) -> StageResult {
        let partial = manifest.stage_status(Stage::Probe) == Some(StageStatus::Partial);
        regenerate_reports(&self.store, &self.run_id, partial)?;
        Ok(None)
    }
}

/// Latest chain set per `(CE pair, generator label)`.
pub fn load_chain_sets(store: &Store, run_id: &str) -> Result<BTreeMap<(String, String), ParsedChainSet>, PipelineError> {
    let loaded = store.load_records::<ParsedChainSet>(run_id, RecordKind::Chains)?;
    warn_diagnostics(&loaded, "chains");
    Ok(loaded
        .into_values()
        .into_iter()
        .map(|s| ((s.ce_pair_id.clone(), s.generator_model.label()), s))
        .collect())
}

/// Latest pair index per generator label.
pub fn load_pair_indexes(store: &Store, run_id: &str) -> Result<BTreeMap<String, PairIndex>, PipelineError> {
    let loaded = store.load_records::<PairsRecord>(run_id, RecordKind::Pairs)?;
    warn_diagnostics(&loaded, "pairs");
    Ok(loaded
        .into_values()
        .into_iter()
        .map(|p| (p.generator_model.label(), p.index))
        .collect())
}

pub fn load_settings(store: &Store, run_id: &str) -> Result<RunSettings, PipelineError> {
    let path = store.run_dir(run_id).join("settings.json");
    let text = std::fs::read_to_string(&path).map_err(|source| StoreError::Io { path: path.clone(), source })?;
    serde_json::from_str(&text).map_err(|e| StoreError::SerializationFailure(e.to_string()).into())
}

pub fn load_run_ce_pairs(store: &Store, run_id: &str) -> Result<Vec<CEPair>, PipelineError> {
    let loaded = store.load_records::<CEPair>(run_id, RecordKind::CePairs)?;
    warn_diagnostics(&loaded, "ce_pairs");
    Ok(loaded.into_values())
}

pub fn load_verdicts(store: &Store, run_id: &str) -> Result<Vec<VerdictRecord>, PipelineError> {
    let loaded = store.load_records::<VerdictRecord>(run_id, RecordKind::Verdicts)?;
    warn_diagnostics(&loaded, "verdicts");
    Ok(loaded.into_values())
}

/// Recomputes every report of a run from its stored records and writes them
/// into the run's `reports/` directory. Returns the file names written.
pub fn regenerate_reports(store: &Store, run_id: &str, allow_incomplete: bool) -> Result<Vec<String>, PipelineError> {
    let settings = load_settings(store, run_id)?;
    let ce_pairs = load_run_ce_pairs(store, run_id)?;
    let chain_sets = load_chain_sets(store, run_id)?;
    let pairs = load_pair_indexes(store, run_id)?;
    let verdicts = load_verdicts(store, run_id)?;
    let report = build_report(&ReportInputs {
        run_id,
        settings: &settings,
        ce_pairs: &ce_pairs,
        chain_sets: &chain_sets,
        pairs: &pairs,
        verdicts: &verdicts,
        allow_incomplete,
    })
    .map_err(|e| PipelineError::StageFailed {
        stage: Stage::Metrics,
        message: e.to_string(),
    })?;
    write_reports(store, run_id, &report)
}

/// Runs every stage of `config` against `pool`.
pub async fn run_full_evaluation(config: RunConfig, pool: Arc<GatewayPool>) -> Result<RunOutcome, PipelineError> {
    Pipeline::new(config, pool)?.run_all().await
}
