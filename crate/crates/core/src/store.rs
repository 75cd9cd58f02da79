//! Append-only JSONL persistence for runs.
//!
//! Layout under the store root:
//!
//! ```text
//! <root>/<run_id>/manifest.json
//! <root>/<run_id>/{ce_pairs,generations,chains,pairs,verdicts}.jsonl
//! <root>/<run_id>/reports/
//! <root>/probe_cache.jsonl
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ModelRef, ProbeKind};
use crate::prompt::TemplateId;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown run {0:?}")]
    UnknownRun(String),
    #[error("run {0:?} already exists")]
    RunExists(String),
    #[error("serialization failure: {0}")]
    SerializationFailure(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// SHA-256 hex digest of arbitrary bytes.
pub fn content_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct CacheKeyMaterial<'a> {
    provider: &'a str,
    model_name: &'a str,
    run_tag: &'a str,
    temperature: f64,
    template_version: &'a str,
    cause: &'a str,
    effect: &'a str,
    kind: ProbeKind,
}

/// Verdict cache key over evaluator identity, template version, normalized
/// link texts and probe kind.
pub fn cache_key(
    evaluator: &ModelRef,
    template_version: &str,
    cause_normalized: &str,
    effect_normalized: &str,
    kind: ProbeKind,
) -> String {
    let material = CacheKeyMaterial {
        provider: &evaluator.provider,
        model_name: &evaluator.model_name,
        run_tag: &evaluator.run_tag,
        temperature: evaluator.temperature,
        template_version,
        cause: cause_normalized,
        effect: effect_normalized,
        kind,
    };
    content_digest(&serde_json::to_vec(&material).expect("key material serializes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    CePairs,
    Generations,
    Chains,
    Pairs,
    Verdicts,
}

impl RecordKind {
    pub fn file_name(self) -> &'static str {
        match self {
            RecordKind::CePairs => "ce_pairs.jsonl",
            RecordKind::Generations => "generations.jsonl",
            RecordKind::Chains => "chains.jsonl",
            RecordKind::Pairs => "pairs.jsonl",
            RecordKind::Verdicts => "verdicts.jsonl",
        }
    }
}

/// Position of a record: file name and 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordId {
    pub file: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineDiagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub records: Vec<(RecordId, T)>,
    pub diagnostics: Vec<LineDiagnostic>,
}

impl<T> Loaded<T> {
    pub fn into_values(self) -> Vec<T> {
        self.records.into_iter().map(|(_, r)| r).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Generate,
    Parse,
    Decompose,
    Probe,
    Metrics,
}

impl Stage {
    pub const PIPELINE: [Stage; 6] = [
        Stage::Ingest,
        Stage::Generate,
        Stage::Parse,
        Stage::Decompose,
        Stage::Probe,
        Stage::Metrics,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub config_digest: String,
    pub template_versions: BTreeMap<TemplateId, String>,
    pub input_digest: String,
    pub model_list: Vec<ModelRef>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn stage_status(&self, stage: Stage) -> Option<StageStatus> {
        self.stages.iter().find(|s| s.stage == stage).map(|s| s.status)
    }

    pub fn is_completed(&self, stage: Stage) -> bool {
        self.stage_status(stage) == Some(StageStatus::Completed)
    }

    pub fn set_stage(&mut self, stage: Stage, status: StageStatus, error: Option<String>) {
        self.stages.retain(|s| s.stage != stage);
        self.stages.push(StageRecord { stage, status, error });
        self.stages.sort_by_key(|s| s.stage);
    }
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    line_counts: Mutex<HashMap<PathBuf, usize>>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self {
            root,
            line_counts: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn probe_cache_path(&self) -> PathBuf {
        self.root.join("probe_cache.jsonl")
    }

    pub fn run_exists(&self, run_id: &str) -> bool {
        self.run_dir(run_id).join("manifest.json").is_file()
    }

    fn require_run(&self, run_id: &str) -> Result<PathBuf, StoreError> {
        if self.run_exists(run_id) {
            Ok(self.run_dir(run_id))
        } else {
            Err(StoreError::UnknownRun(run_id.to_string()))
        }
    }

    pub fn create_run(&self, manifest: &RunManifest) -> Result<(), StoreError> {
        if self.run_exists(&manifest.run_id) {
            return Err(StoreError::RunExists(manifest.run_id.clone()));
        }
        let dir = self.run_dir(&manifest.run_id);
        let reports = dir.join("reports");
        fs::create_dir_all(&reports).map_err(io_err(&reports))?;
        self.write_manifest(manifest)
    }

    /// Replaces the manifest atomically via rename.
    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), StoreError> {
        let dir = self.run_dir(&manifest.run_id);
        let tmp = dir.join("manifest.json.tmp");
        let json = serde_json::to_string_pretty(manifest)
            .map_err(|e| StoreError::SerializationFailure(e.to_string()))?;
        fs::write(&tmp, json + "\n").map_err(io_err(&tmp))?;
        let dest = dir.join("manifest.json");
        fs::rename(&tmp, &dest).map_err(io_err(&dest))
    }

    pub fn load_manifest(&self, run_id: &str) -> Result<RunManifest, StoreError> {
        let path = self.require_run(run_id)?.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| StoreError::SerializationFailure(e.to_string()))
    }

    pub fn list_runs(&self) -> Result<Vec<String>, StoreError> {
        let mut runs = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if self.run_exists(&name) {
                runs.push(name);
            }
        }
        runs.sort();
        Ok(runs)
    }

    fn existing_lines(path: &Path) -> Result<usize, StoreError> {
        if !path.exists() {
            return Ok(0);
        }
        let file = File::open(path).map_err(io_err(path))?;
        Ok(BufReader::new(file).lines().count())
    }

    pub fn append_record<T: Serialize>(
        &self,
        run_id: &str,
        kind: RecordKind,
        record: &T,
    ) -> Result<RecordId, StoreError> {
        Ok(self
            .append_records(run_id, kind, std::slice::from_ref(record))?
            .pop()
            .expect("one record appended"))
    }

    /// Appends records in order and syncs the file once.
    pub fn append_records<T: Serialize>(
        &self,
        run_id: &str,
        kind: RecordKind,
        records: &[T],
    ) -> Result<Vec<RecordId>, StoreError> {
        let path = self.require_run(run_id)?.join(kind.file_name());
        let mut lines = String::new();
        for record in records {
            let json = serde_json::to_string(record)
                .map_err(|e| StoreError::SerializationFailure(e.to_string()))?;
            lines.push_str(&json);
            lines.push('\n');
        }
        let mut counts = self.line_counts.lock().expect("line count lock poisoned");
        let count = match counts.get(&path) {
            Some(&n) => n,
            None => Self::existing_lines(&path)?,
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.write_all(lines.as_bytes()).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))?;
        counts.insert(path, count + records.len());
        Ok((0..records.len())
            .map(|i| RecordId {
                file: kind.file_name().to_string(),
                line: count + i + 1,
            })
            .collect())
    }

    /// Reads every record in append order. Lines that fail to parse are
    /// reported as diagnostics; the rest are still returned.
    pub fn load_records<T: DeserializeOwned>(
        &self,
        run_id: &str,
        kind: RecordKind,
    ) -> Result<Loaded<T>, StoreError> {
        let path = self.require_run(run_id)?.join(kind.file_name());
        read_jsonl(&path, kind.file_name())
    }

    pub fn reports_dir(&self, run_id: &str) -> Result<PathBuf, StoreError> {
        Ok(self.require_run(run_id)?.join("reports"))
    }

    pub fn write_report(&self, run_id: &str, name: &str, contents: &str) -> Result<PathBuf, StoreError> {
        let dir = self.reports_dir(run_id)?;
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(name);
        fs::write(&path, contents).map_err(io_err(&path))?;
        Ok(path)
    }
}

/// Reads a JSONL file that may not exist yet.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, file_label: &str) -> Result<Loaded<T>, StoreError> {
    let mut loaded = Loaded {
        records: Vec::new(),
        diagnostics: Vec::new(),
    };
    if !path.exists() {
        return Ok(loaded);
    }
    let file = File::open(path).map_err(io_err(path))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                loaded.diagnostics.push(LineDiagnostic {
                    line: line_no,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(record) => loaded.records.push((
                RecordId {
                    file: file_label.to_string(),
                    line: line_no,
                },
                record,
            )),
            Err(e) => loaded.diagnostics.push(LineDiagnostic {
                line: line_no,
                message: e.to_string(),
            }),
        }
    }
    Ok(loaded)
}
