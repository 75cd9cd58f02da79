//! Human evaluation: sample selection, annotator assignment, judgment
//! capture, majority voting and agreement.

mod agreement;
mod api;
mod assign;
mod prepare;
mod records;
mod select;
mod session;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agreement::{agreement_report, majority_vote, AgreementReport, ChainOutcome, KappaOutcome, MajorityOutcome, Tally};
pub use api::{router, serve};
pub use prepare::{best_generator, prepare_session, PrepareError, PrepareOptions, Prepared};
pub use assign::{assign_annotators, Assignment, AssignmentPlan, DEFAULT_CAP_PAIRS};
pub use records::{
    annotations_from_csv, annotations_to_csv, surveys_from_csv, surveys_to_csv, AnnotationRecord, SurveyRecord,
    YesNo,
};
pub use select::{integrity_votes, select_eval_sample, EvalSample, VoteCount, DEFAULT_N_CE};
pub use session::{
    Ack, ChainView, CreateSession, Instructions, ItemView, JudgmentSubmission, NextItem, Progress, SessionService,
    SurveySubmission,
};

use crate::metrics::MetricsError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HumanEvalError {
    #[error("only {found} CE pairs have both a maintained and a violated chain, {wanted} requested")]
    InsufficientEligiblePairs {
        found: usize,
        wanted: usize,
        samples: Vec<EvalSample>,
    },
    #[error("infeasible assignment: {constraint}")]
    InfeasibleAssignment { constraint: String },
    #[error("expected {expected} judgments, got {found}")]
    WrongJudgmentCount { found: usize, expected: usize },
    #[error("chain {chain} is not assigned to annotator {annotator}")]
    NotAssigned { annotator: String, chain: String },
    #[error("session {0} is closed")]
    SessionClosed(String),
    #[error("a different submission already exists for {0}")]
    DuplicateSubmission(String),
    #[error("annotator {annotator} still has {remaining} chains to judge")]
    SessionIncomplete { annotator: String, remaining: usize },
    #[error("difficulty must be between 1 and 5, got {0}")]
    InvalidDifficulty(u8),
    #[error("{} judgments missing", .0.len())]
    IncompleteJudgments(Vec<MissingJudgment>),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("metric failure: {0}")]
    Metrics(#[from] MetricsError),
    #[error("csv: {0}")]
    Csv(String),
    #[error("storage: {0}")]
    Storage(String),
}

impl HumanEvalError {
    /// Stable variant name, sent to API clients.
    pub fn code(&self) -> &'static str {
        match self {
            HumanEvalError::InsufficientEligiblePairs { .. } => "InsufficientEligiblePairs",
            HumanEvalError::InfeasibleAssignment { .. } => "InfeasibleAssignment",
            HumanEvalError::WrongJudgmentCount { .. } => "WrongJudgmentCount",
            HumanEvalError::NotAssigned { .. } => "NotAssigned",
            HumanEvalError::SessionClosed(_) => "SessionClosed",
            HumanEvalError::DuplicateSubmission(_) => "DuplicateSubmission",
            HumanEvalError::SessionIncomplete { .. } => "SessionIncomplete",
            HumanEvalError::InvalidDifficulty(_) => "InvalidDifficulty",
            HumanEvalError::IncompleteJudgments(_) => "IncompleteJudgments",
            HumanEvalError::UnknownSession(_) => "UnknownSession",
            HumanEvalError::InvalidSession(_) => "InvalidSession",
            HumanEvalError::Metrics(_) => "Metrics",
            HumanEvalError::Csv(_) => "Csv",
            HumanEvalError::Storage(_) => "Storage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MissingJudgment {
    pub annotator_id: String,
    pub chain_id: String,
}
