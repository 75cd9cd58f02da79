//! Building an annotation session from a finished run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{assign_annotators, integrity_votes, select_eval_sample, CreateSession, HumanEvalError};
use crate::metrics::{chain_link_verdicts, IntegrityMatrix};
use crate::model::{CausalChain, ModelRef};
use crate::pipeline::{load_chain_sets, load_run_ce_pairs, load_settings, load_verdicts, PipelineError};
use crate::probe::VerdictTable;
use crate::report::{verdict_tables, MetricsReport};
use crate::store::Store;

#[derive(Debug, Error)]
pub enum PrepareError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    HumanEval(#[from] HumanEvalError),
    #[error("no integrity matrix in the run's report; run the metrics stage with A1 and A2 probes")]
    NoIntegrityMatrix,
    #[error("generator {0:?} is not part of the run")]
    UnknownGenerator(String),
    #[error("no CE pair has both a maintained and a violated chain")]
    NoSamples,
}

#[derive(Debug, Clone)]
pub struct PrepareOptions {
    /// Generator label; the best one by integrity when unset.
    pub generator: Option<String>,
    pub n_ce: usize,
    pub annotators: Vec<String>,
    pub per_chain: usize,
    pub cap_pairs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prepared {
    pub generator: ModelRef,
    pub request: CreateSession,
    /// Selected CE pairs when fewer than requested were eligible.
    pub shortfall: Option<usize>,
}

/// Generator with the highest pooled share of valid chains across
/// evaluators. Ties go to the earlier generator.
pub fn best_generator(matrix: &IntegrityMatrix) -> Option<usize> {
    let mut best: Option<(usize, usize, usize)> = None;
    for g in 0..matrix.generators.len() {
        let (valid, total) = matrix
            .counts
            .iter()
            .filter_map(|row| row[g])
            .fold((0, 0), |(v, t), c| (v + c.valid, t + c.total));
        if total == 0 {
            continue;
        }
        // valid/total > bv/bt without division.
        let better = best.is_none_or(|(_, bv, bt)| valid * bt > bv * total);
        if better {
            best = Some((g, valid, total));
        }
    }
    best.map(|(g, _, _)| g)
}

pub fn prepare_session(
    store: &Store,
    run_id: &str,
    report: &MetricsReport,
    options: &PrepareOptions,
) -> Result<Prepared, PrepareError> {
    let settings = load_settings(store, run_id)?;
    let generator = match &options.generator {
        Some(label) => settings
            .generators
            .iter()
            .find(|g| &g.label() == label)
            .cloned()
            .ok_or_else(|| PrepareError::UnknownGenerator(label.clone()))?,
        None => {
            let matrix = report.integrity.matrix.as_ref().ok_or(PrepareError::NoIntegrityMatrix)?;
            let g = best_generator(matrix).ok_or(PrepareError::NoIntegrityMatrix)?;
            matrix.generators[g].clone()
        }
    };
    let ce_pairs = load_run_ce_pairs(store, run_id)?;
    let sets = load_chain_sets(store, run_id)?;
    let tables = verdict_tables(&load_verdicts(store, run_id)?);
    let empty = VerdictTable::default();
    let evaluator_tables: Vec<&VerdictTable> = settings
        .evaluators
        .iter()
        .map(|e| tables.get(&(generator.label(), e.label())).unwrap_or(&empty))
        .collect();
    let chains: Vec<&CausalChain> = ce_pairs
        .iter()
        .filter_map(|ce| sets.get(&(ce.id.clone(), generator.label())))
        .flat_map(|s| s.chains.iter())
        .filter(|c| settings.is_eligible(c))
        .filter(|c| evaluator_tables.iter().all(|t| chain_link_verdicts(c, t).is_ok()))
        .collect();
    let votes = integrity_votes(&chains, &evaluator_tables).map_err(HumanEvalError::from)?;
    let (samples, shortfall) = match select_eval_sample(&chains, &votes, options.n_ce) {
        Ok(samples) => (samples, None),
        Err(HumanEvalError::InsufficientEligiblePairs { found, samples, .. }) => (samples, Some(found)),
        Err(e) => return Err(e.into()),
    };
    if samples.is_empty() {
        return Err(PrepareError::NoSamples);
    }
    let plan = assign_annotators(
        &samples,
        &options.annotators,
        options.per_chain,
        options.cap_pairs,
        options.seed,
    )?;
    let by_id: BTreeMap<&str, &CausalChain> = chains.iter().map(|c| (c.id.as_str(), *c)).collect();
    let texts = plan
        .chain_ids()
        .into_iter()
        .map(|id| {
            let events = by_id[id.as_str()].events.iter().map(|e| e.text.clone()).collect();
            (id, events)
        })
        .collect();
    Ok(Prepared {
        generator,
        request: CreateSession {
            samples,
            plan,
            chains: texts,
        },
        shortfall,
    })
}
