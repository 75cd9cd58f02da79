use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    agreement_report, annotations_to_csv, surveys_to_csv, AgreementReport, AnnotationRecord, AssignmentPlan,
    EvalSample, HumanEvalError, SurveyRecord, YesNo,
};
use crate::store::read_jsonl;

/// Task instructions with illustrative chains, shown with every item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instructions {
    pub text: String,
    pub examples: Vec<Vec<String>>,
}

impl Instructions {
    pub fn builtin() -> Self {
        serde_json::from_str(include_str!("../../assets/instructions.json")).expect("bundled instructions parse")
    }

    pub fn load(path: &Path) -> Result<Self, HumanEvalError> {
        let text = fs::read_to_string(path).map_err(|e| HumanEvalError::Storage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HumanEvalError::Storage(format!("{}: {e}", path.display())))
    }
}

impl Default for Instructions {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSession {
    pub samples: Vec<EvalSample>,
    pub plan: AssignmentPlan,
    /// Event texts of every chain in the plan.
    pub chains: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentSubmission {
    pub annotator_id: String,
    pub chain_ref: String,
    pub integrity: YesNo,
    pub coherence: YesNo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveySubmission {
    pub annotator_id: String,
    pub difficulty: u8,
    pub can_construct_chain: YesNo,
    #[serde(default)]
    pub comparison_note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub session_id: String,
    pub annotator_id: String,
    pub chain_ref: String,
    pub sequence: usize,
    pub submitted_at: DateTime<Utc>,
}

/// A chain as annotators see it: an opaque reference and its events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainView {
    pub label: String,
    pub chain_ref: String,
    pub events: Vec<String>,
    pub integrity: Option<YesNo>,
    pub coherence: Option<YesNo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemView {
    pub item_index: usize,
    pub chain_a: ChainView,
    pub chain_b: ChainView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed_items: usize,
    pub total_items: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextItem {
    pub session_id: String,
    pub annotator_id: String,
    pub progress: Progress,
    pub item: Option<ItemView>,
    pub survey_submitted: bool,
    pub closed: bool,
    pub instructions: Instructions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionHeader {
    session_id: String,
    closed: bool,
    create: CreateSession,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredJudgment {
    ack: Ack,
    record: AnnotationRecord,
}

struct Session {
    header: SessionHeader,
    refs: BTreeMap<String, String>,
    judgments: BTreeMap<(String, String), StoredJudgment>,
    surveys: BTreeMap<String, SurveyRecord>,
    dir: Option<PathBuf>,
}

fn chain_ref(session_id: &str, chain_id: &str) -> String {
    let digest = Sha256::digest(format!("{session_id}\n{chain_id}").as_bytes());
    format!("c{}", &hex::encode(digest)[..12])
}

fn storage<E: std::fmt::Display>(e: E) -> HumanEvalError {
    HumanEvalError::Storage(e.to_string())
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<(), HumanEvalError> {
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(storage)?;
    let line = serde_json::to_string(value).map_err(storage)?;
    writeln!(file, "{line}").map_err(storage)?;
    file.sync_data().map_err(storage)
}

impl Session {
    fn new(header: SessionHeader, dir: Option<PathBuf>) -> Self {
        let refs = header
            .create
            .plan
            .chain_ids()
            .into_iter()
            .map(|c| (chain_ref(&header.session_id, &c), c))
            .collect();
        Self {
            header,
            refs,
            judgments: BTreeMap::new(),
            surveys: BTreeMap::new(),
            dir,
        }
    }

    fn id(&self) -> &str {
        &self.header.session_id
    }

    fn write_header(&self) -> Result<(), HumanEvalError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let tmp = dir.join("session.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&self.header).map_err(storage)?).map_err(storage)?;
        fs::rename(&tmp, dir.join("session.json")).map_err(storage)
    }

    fn ensure_open(&self) -> Result<(), HumanEvalError> {
        if self.header.closed {
            Err(HumanEvalError::SessionClosed(self.id().to_string()))
        } else {
            Ok(())
        }
    }

    fn is_annotator(&self, annotator: &str) -> bool {
        self.header.create.plan.annotators.iter().any(|a| a == annotator)
    }

    fn remaining(&self, annotator: &str) -> usize {
        self.header
            .create
            .plan
            .expected_judgments()
            .iter()
            .filter(|(a, c)| a == annotator && !self.judgments.contains_key(&(a.clone(), c.clone())))
            .count()
    }

    fn view(&self, annotator: &str, label: &str, chain_id: &str) -> ChainView {
        let judged = self.judgments.get(&(annotator.to_string(), chain_id.to_string()));
        ChainView {
            label: label.to_string(),
            chain_ref: chain_ref(self.id(), chain_id),
            events: self.header.create.chains.get(chain_id).cloned().unwrap_or_default(),
            integrity: judged.map(|j| j.record.integrity_judgment),
            coherence: judged.map(|j| j.record.coherence_judgment),
        }
    }

    fn records(&self) -> Vec<AnnotationRecord> {
        let mut stored: Vec<&StoredJudgment> = self.judgments.values().collect();
        stored.sort_by_key(|j| j.ack.sequence);
        stored.into_iter().map(|j| j.record.clone()).collect()
    }
}

type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// In-memory session state, optionally mirrored to a directory so sessions
/// survive restarts.
pub struct SessionService {
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    instructions: Instructions,
    dir: Option<PathBuf>,
    clock: Clock,
}

impl SessionService {
    pub fn in_memory(instructions: Instructions) -> Self {
        Self {
            sessions: RwLock::new(BTreeMap::new()),
            instructions,
            dir: None,
            clock: Arc::new(Utc::now),
        }
    }

    /// Opens or creates a persistent service rooted at `dir`.
    pub fn open(dir: impl Into<PathBuf>, instructions: Instructions) -> Result<Self, HumanEvalError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(storage)?;
        let mut sessions = BTreeMap::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(storage)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("session.json").is_file())
            .collect();
        entries.sort();
        for sdir in entries {
            let text = fs::read_to_string(sdir.join("session.json")).map_err(storage)?;
            let header: SessionHeader = serde_json::from_str(&text).map_err(storage)?;
            let mut session = Session::new(header, Some(sdir.clone()));
            for stored in read_jsonl::<StoredJudgment>(&sdir.join("annotations.jsonl"), "annotations")
                .map_err(storage)?
                .into_values() {
                let key = (stored.record.annotator_id.clone(), stored.record.chain_id.clone());
                session.judgments.entry(key).or_insert(stored);
            }
            for survey in read_jsonl::<SurveyRecord>(&sdir.join("surveys.jsonl"), "surveys")
                .map_err(storage)?
                .into_values() {
                session.surveys.entry(survey.annotator_id.clone()).or_insert(survey);
            }
            sessions.insert(session.id().to_string(), Arc::new(Mutex::new(session)));
        }
        Ok(Self {
            sessions: RwLock::new(sessions),
            instructions,
            dir: Some(dir),
            clock: Arc::new(Utc::now),
        })
    }

    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, HumanEvalError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| HumanEvalError::UnknownSession(id.to_string()))
    }

    fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, HumanEvalError>,
    ) -> Result<T, HumanEvalError> {
        let session = self.session(id)?;
        let mut guard = session.lock().expect("session lock");
        f(&mut guard)
    }

    /// Creates a session. The id is derived from the request, so repeating a
    /// request returns the existing session.
    pub fn create_session(&self, request: CreateSession) -> Result<String, HumanEvalError> {
        for chain in request.plan.chain_ids() {
            match request.chains.get(&chain) {
                Some(events) if !events.is_empty() => {}
                _ => return Err(HumanEvalError::InvalidSession(format!("no events for chain {chain}"))),
            }
        }
        let bytes = serde_json::to_vec(&request).map_err(storage)?;
        let id = format!("s{}", &hex::encode(Sha256::digest(&bytes))[..16]);
        let mut map = self.sessions.write().expect("session map lock");
        if map.contains_key(&id) {
            return Ok(id);
        }
        let sdir = self.dir.as_ref().map(|d| d.join(&id));
        if let Some(d) = &sdir {
            fs::create_dir_all(d).map_err(storage)?;
        }
        let session = Session::new(
            SessionHeader {
                session_id: id.clone(),
                closed: false,
                create: request,
            },
            sdir,
        );
        session.write_header()?;
        map.insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("session map lock").keys().cloned().collect()
    }

    pub fn next_item(&self, session_id: &str, annotator: &str) -> Result<NextItem, HumanEvalError> {
        self.with_session(session_id, |s| {
            if !s.is_annotator(annotator) {
                return Err(HumanEvalError::NotAssigned {
                    annotator: annotator.to_string(),
                    chain: String::new(),
                });
            }
            let items: Vec<_> = s.header.create.plan.for_annotator(annotator).collect();
            let done = |chain: &String| s.judgments.contains_key(&(annotator.to_string(), chain.clone()));
            let completed = items.iter().filter(|a| done(&a.chain_a) && done(&a.chain_b)).count();
            let item = items
                .iter()
                .enumerate()
                .find(|(_, a)| !(done(&a.chain_a) && done(&a.chain_b)))
                .map(|(i, a)| ItemView {
                    item_index: i,
                    chain_a: s.view(annotator, "A", &a.chain_a),
                    chain_b: s.view(annotator, "B", &a.chain_b),
                });
            Ok(NextItem {
                session_id: s.id().to_string(),
                annotator_id: annotator.to_string(),
                progress: Progress {
                    completed_items: completed,
                    total_items: items.len(),
                },
                item,
                survey_submitted: s.surveys.contains_key(annotator),
                closed: s.header.closed,
                instructions: self.instructions.clone(),
            })
        })
    }

    /// Stores one judgment. Resubmitting the same judgment returns the
    /// original acknowledgment; a conflicting one is rejected.
    pub fn record_judgment(&self, session_id: &str, sub: JudgmentSubmission) -> Result<Ack, HumanEvalError> {
        self.with_session(session_id, |s| {
            let not_assigned = || HumanEvalError::NotAssigned {
                annotator: sub.annotator_id.clone(),
                chain: sub.chain_ref.clone(),
            };
            let chain_id = s.refs.get(&sub.chain_ref).cloned().ok_or_else(not_assigned)?;
            let key = (sub.annotator_id.clone(), chain_id.clone());
            if let Some(prev) = s.judgments.get(&key) {
                return if (prev.record.integrity_judgment, prev.record.coherence_judgment)
                    == (sub.integrity, sub.coherence)
                {
                    Ok(prev.ack.clone())
                } else {
                    Err(HumanEvalError::DuplicateSubmission(sub.chain_ref.clone()))
                };
            }
            s.ensure_open()?;
            if !s.header.create.plan.expected_judgments().contains(&key) {
                return Err(not_assigned());
            }
            let now = (self.clock)();
            let stored = StoredJudgment {
                ack: Ack {
                    session_id: s.id().to_string(),
                    annotator_id: sub.annotator_id.clone(),
                    chain_ref: sub.chain_ref.clone(),
                    sequence: s.judgments.len() + 1,
                    submitted_at: now,
                },
                record: AnnotationRecord {
                    session_id: s.id().to_string(),
                    annotator_id: sub.annotator_id.clone(),
                    chain_id,
                    integrity_judgment: sub.integrity,
                    coherence_judgment: sub.coherence,
                    submitted_at: now,
                },
            };
            if let Some(dir) = &s.dir {
                append_line(&dir.join("annotations.jsonl"), &stored)?;
            }
            let ack = stored.ack.clone();
            s.judgments.insert(key, stored);
            Ok(ack)
        })
    }

    pub fn submit_survey(&self, session_id: &str, sub: SurveySubmission) -> Result<SurveyRecord, HumanEvalError> {
        self.with_session(session_id, |s| {
            if !s.is_annotator(&sub.annotator_id) {
                return Err(HumanEvalError::NotAssigned {
                    annotator: sub.annotator_id.clone(),
                    chain: String::new(),
                });
            }
            if !(1..=5).contains(&sub.difficulty) {
                return Err(HumanEvalError::InvalidDifficulty(sub.difficulty));
            }
            let record = SurveyRecord {
                annotator_id: sub.annotator_id.clone(),
                difficulty: sub.difficulty,
                can_construct_chain: sub.can_construct_chain,
                comparison_note: sub.comparison_note,
            };
            if let Some(prev) = s.surveys.get(&sub.annotator_id) {
                return if *prev == record {
                    Ok(record)
                } else {
                    Err(HumanEvalError::DuplicateSubmission(format!("survey of {}", sub.annotator_id)))
                };
            }
            s.ensure_open()?;
            let remaining = s.remaining(&sub.annotator_id);
            if remaining > 0 {
                return Err(HumanEvalError::SessionIncomplete {
                    annotator: sub.annotator_id,
                    remaining,
                });
            }
            if let Some(dir) = &s.dir {
                append_line(&dir.join("surveys.jsonl"), &record)?;
            }
            s.surveys.insert(record.annotator_id.clone(), record.clone());
            Ok(record)
        })
    }

    pub fn close_session(&self, session_id: &str) -> Result<(), HumanEvalError> {
        self.with_session(session_id, |s| {
            if !s.header.closed {
                s.header.closed = true;
                s.write_header()?;
            }
            Ok(())
        })
    }

    pub fn report(&self, session_id: &str) -> Result<AgreementReport, HumanEvalError> {
        self.with_session(session_id, |s| agreement_report(&s.header.create.plan, &s.records()))
    }

    pub fn annotations(&self, session_id: &str) -> Result<Vec<AnnotationRecord>, HumanEvalError> {
        self.with_session(session_id, |s| Ok(s.records()))
    }

    pub fn surveys(&self, session_id: &str) -> Result<Vec<SurveyRecord>, HumanEvalError> {
        self.with_session(session_id, |s| Ok(s.surveys.values().cloned().collect()))
    }

    pub fn annotations_csv(&self, session_id: &str) -> Result<String, HumanEvalError> {
        annotations_to_csv(&self.annotations(session_id)?)
    }

    pub fn surveys_csv(&self, session_id: &str) -> Result<String, HumanEvalError> {
        surveys_to_csv(&self.surveys(session_id)?)
    }
}
