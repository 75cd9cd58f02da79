use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, AssignmentPlan, HumanEvalError, MissingJudgment, YesNo};
use crate::metrics::{fleiss_kappa, KappaResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MajorityOutcome {
    Confirmed,
    Rejected,
    NoMajority,
}

pub fn majority_vote(judgments: &[YesNo], expected: usize) -> Result<MajorityOutcome, HumanEvalError> {
    if judgments.len() != expected {
        return Err(HumanEvalError::WrongJudgmentCount {
            found: judgments.len(),
            expected,
        });
    }
    let yes = judgments.iter().filter(|j| j.is_yes()).count();
    let no = judgments.len() - yes;
    Ok(match yes.cmp(&no) {
        std::cmp::Ordering::Greater => MajorityOutcome::Confirmed,
        std::cmp::Ordering::Less => MajorityOutcome::Rejected,
        std::cmp::Ordering::Equal => MajorityOutcome::NoMajority,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub confirmed: usize,
    pub rejected: usize,
    pub no_majority: usize,
}

impl Tally {
    fn add(&mut self, outcome: MajorityOutcome) {
        match outcome {
            MajorityOutcome::Confirmed => self.confirmed += 1,
            MajorityOutcome::Rejected => self.rejected += 1,
            MajorityOutcome::NoMajority => self.no_majority += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum KappaOutcome {
    Computed {
        #[serde(flatten)]
        result: KappaResult,
    },
    Unavailable {
        code: String,
        reason: String,
    },
}

impl KappaOutcome {
    pub fn result(&self) -> Option<&KappaResult> {
        match self {
            KappaOutcome::Computed { result } => Some(result),
            KappaOutcome::Unavailable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainOutcome {
    pub chain_id: String,
    pub integrity_yes: usize,
    pub coherence_yes: usize,
    pub integrity: MajorityOutcome,
    pub coherence: MajorityOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub integrity: KappaOutcome,
    pub coherence: KappaOutcome,
    pub integrity_tally: Tally,
    pub coherence_tally: Tally,
    pub chains: Vec<ChainOutcome>,
}

fn kappa(table: &[Vec<usize>], raters: usize) -> KappaOutcome {
    match fleiss_kappa(table, raters) {
        Ok(result) => KappaOutcome::Computed { result },
        Err(e) => KappaOutcome::Unavailable {
            code: e.code().into(),
            reason: e.to_string(),
        },
    }
}

/// Majority votes and Fleiss' kappa over the plan's chains. Every expected
/// judgment must be present.
pub fn agreement_report(
    plan: &AssignmentPlan,
    records: &[AnnotationRecord],
) -> Result<AgreementReport, HumanEvalError> {
    let expected = plan.expected_judgments();
    let mut got: BTreeMap<(String, String), &AnnotationRecord> = BTreeMap::new();
    for rec in records {
        let key = (rec.annotator_id.clone(), rec.chain_id.clone());
        if !expected.contains(&key) {
            return Err(HumanEvalError::NotAssigned {
                annotator: key.0,
                chain: key.1,
            });
        }
        if let Some(prev) = got.insert(key, rec) {
            if (prev.integrity_judgment, prev.coherence_judgment)
                != (rec.integrity_judgment, rec.coherence_judgment)
            {
                return Err(HumanEvalError::DuplicateSubmission(format!(
                    "{} / {}",
                    rec.annotator_id, rec.chain_id
                )));
            }
        }
    }
    let missing: Vec<MissingJudgment> = expected
        .iter()
        .filter(|k| !got.contains_key(*k))
        .map(|(a, c)| MissingJudgment {
            annotator_id: a.clone(),
            chain_id: c.clone(),
        })
        .collect();
    if !missing.is_empty() {
        return Err(HumanEvalError::IncompleteJudgments(missing));
    }

    let mut by_chain: BTreeMap<&str, (Vec<YesNo>, Vec<YesNo>)> = BTreeMap::new();
    for ((_, chain), rec) in &got {
        let entry = by_chain.entry(chain.as_str()).or_default();
        entry.0.push(rec.integrity_judgment);
        entry.1.push(rec.coherence_judgment);
    }
    let mut chains = Vec::with_capacity(by_chain.len());
    let (mut integrity_tally, mut coherence_tally) = (Tally::default(), Tally::default());
    let (mut integrity_table, mut coherence_table) = (Vec::new(), Vec::new());
    for (chain_id, (integ, coher)) in by_chain {
        let i_out = majority_vote(&integ, plan.per_chain)?;
        let c_out = majority_vote(&coher, plan.per_chain)?;
        integrity_tally.add(i_out);
        coherence_tally.add(c_out);
        let iy = integ.iter().filter(|j| j.is_yes()).count();
        let cy = coher.iter().filter(|j| j.is_yes()).count();
        integrity_table.push(vec![iy, integ.len() - iy]);
        coherence_table.push(vec![cy, coher.len() - cy]);
        chains.push(ChainOutcome {
            chain_id: chain_id.to_string(),
            integrity_yes: iy,
            coherence_yes: cy,
            integrity: i_out,
            coherence: c_out,
        });
    }
    Ok(AgreementReport {
        integrity: kappa(&integrity_table, plan.per_chain),
        coherence: kappa(&coherence_table, plan.per_chain),
        integrity_tally,
        coherence_tally,
        chains,
    })
}
