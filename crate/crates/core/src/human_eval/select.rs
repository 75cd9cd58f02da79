use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::HumanEvalError;
use crate::metrics::{chain_integrity, chain_link_verdicts, MetricsError};
use crate::model::CausalChain;
use crate::probe::VerdictTable;

pub const DEFAULT_N_CE: usize = 18;

/// Evaluator votes on one chain's integrity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCount {
    pub maintained: usize,
    pub total: usize,
}

impl VoteCount {
    pub fn violated(&self) -> usize {
        self.total - self.maintained
    }
}

/// Counts, per chain, how many evaluators find its integrity intact.
pub fn integrity_votes(
    chains: &[&CausalChain],
    evaluator_tables: &[&VerdictTable],
) -> Result<BTreeMap<String, VoteCount>, MetricsError> {
    let mut votes = BTreeMap::new();
    for chain in chains {
        let mut maintained = 0;
        for table in evaluator_tables {
            if chain_integrity(chain, &chain_link_verdicts(chain, table)?)? {
                maintained += 1;
            }
        }
        votes.insert(
            chain.id.clone(),
            VoteCount {
                maintained,
                total: evaluator_tables.len(),
            },
        );
    }
    Ok(votes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub ce_pair_id: String,
    pub maintained_chain_id: String,
    pub violated_chain_id: String,
    /// `(maintained votes of the maintained chain, violated votes of the violated chain)`.
    pub agreement_scores: (usize, usize),
    pub length_delta: usize,
}

impl EvalSample {
    pub fn strength(&self) -> usize {
        self.agreement_scores.0 + self.agreement_scores.1
    }
}

struct Candidate<'a> {
    id: &'a str,
    links: usize,
    votes: usize,
}

fn top<'c, 'a>(cands: &'c [Candidate<'a>]) -> Vec<&'c Candidate<'a>> {
    let best = cands.iter().map(|c| c.votes).max().unwrap_or(0);
    cands.iter().filter(|c| c.votes == best).collect()
}

fn pick(chains: &[&CausalChain], votes: &BTreeMap<String, VoteCount>) -> Option<EvalSample> {
    let mut maintained = Vec::new();
    let mut violated = Vec::new();
    for chain in chains {
        let Some(v) = votes.get(&chain.id) else { continue };
        // A chain belongs to a category when a strict majority of evaluators puts it there.
        if 2 * v.maintained > v.total {
            maintained.push(Candidate {
                id: &chain.id,
                links: chain.chain_length(),
                votes: v.maintained,
            });
        } else if 2 * v.violated() > v.total {
            violated.push(Candidate {
                id: &chain.id,
                links: chain.chain_length(),
                votes: v.violated(),
            });
        }
    }
    let (m_top, v_top) = (top(&maintained), top(&violated));
    let (m, v) = m_top
        .iter()
        .flat_map(|m| v_top.iter().map(move |v| (*m, *v)))
        .min_by(|(m1, v1), (m2, v2)| {
            m1.links
                .abs_diff(v1.links)
                .cmp(&m2.links.abs_diff(v2.links))
                .then_with(|| m1.id.cmp(m2.id))
                .then_with(|| v1.id.cmp(v2.id))
        })?;
    Some(EvalSample {
        ce_pair_id: chains[0].ce_pair_id.clone(),
        maintained_chain_id: m.id.to_string(),
        violated_chain_id: v.id.to_string(),
        agreement_scores: (m.votes, v.votes),
        length_delta: m.links.abs_diff(v.links),
    })
}

/// Picks the most agreed-upon maintained and violated chain for up to `n_ce`
/// CE pairs, strongest first. Chains should come from a single generator.
pub fn select_eval_sample(
    chains: &[&CausalChain],
    votes: &BTreeMap<String, VoteCount>,
    n_ce: usize,
) -> Result<Vec<EvalSample>, HumanEvalError> {
    let mut by_ce: BTreeMap<&str, Vec<&CausalChain>> = BTreeMap::new();
    for chain in chains.iter().filter(|c| c.is_structurally_valid()) {
        by_ce.entry(chain.ce_pair_id.as_str()).or_default().push(chain);
    }
    let mut samples: Vec<EvalSample> = by_ce.values().filter_map(|group| pick(group, votes)).collect();
    samples.sort_by(|a, b| {
        b.strength()
            .cmp(&a.strength())
            .then_with(|| a.length_delta.cmp(&b.length_delta))
            .then_with(|| a.ce_pair_id.cmp(&b.ce_pair_id))
    });
    if samples.len() < n_ce {
        return Err(HumanEvalError::InsufficientEligiblePairs {
            found: samples.len(),
            wanted: n_ce,
            samples,
        });
    }
    samples.truncate(n_ce);
    Ok(samples)
}
