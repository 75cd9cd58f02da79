use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalSample, HumanEvalError};

/// Chain pairs one annotator judges at most.
pub const DEFAULT_CAP_PAIRS: usize = 6;

/// One chain pair shown to one annotator, in display order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub annotator_id: String,
    pub sample_index: usize,
    pub ce_pair_id: String,
    pub chain_a: String,
    pub chain_b: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    pub seed: u64,
    pub per_chain: usize,
    pub cap_pairs: usize,
    pub annotators: Vec<String>,
    pub assignments: Vec<Assignment>,
}

impl AssignmentPlan {
    pub fn for_annotator<'a>(&'a self, annotator: &'a str) -> impl Iterator<Item = &'a Assignment> + 'a {
        self.assignments.iter().filter(move |a| a.annotator_id == annotator)
    }

    /// Every `(annotator, chain)` judgment the plan expects.
    pub fn expected_judgments(&self) -> BTreeSet<(String, String)> {
        self.assignments
            .iter()
            .flat_map(|a| {
                [
                    (a.annotator_id.clone(), a.chain_a.clone()),
                    (a.annotator_id.clone(), a.chain_b.clone()),
                ]
            })
            .collect()
    }

    pub fn chain_ids(&self) -> BTreeSet<String> {
        self.assignments
            .iter()
            .flat_map(|a| [a.chain_a.clone(), a.chain_b.clone()])
            .collect()
    }
}

fn infeasible(constraint: impl Into<String>) -> HumanEvalError {
    HumanEvalError::InfeasibleAssignment {
        constraint: constraint.into(),
    }
}

/// Gives each sample's chain pair to `per_chain` distinct annotators, least
/// loaded first, with a seeded A/B order per assignment.
pub fn assign_annotators(
    samples: &[EvalSample],
    annotators: &[String],
    per_chain: usize,
    cap_pairs: usize,
    seed: u64,
) -> Result<AssignmentPlan, HumanEvalError> {
    if per_chain == 0 {
        return Err(infeasible("per_chain must be at least 1"));
    }
    let distinct: BTreeSet<&String> = annotators.iter().collect();
    if distinct.len() != annotators.len() {
        return Err(infeasible("annotator ids must be unique"));
    }
    if annotators.len() < per_chain {
        return Err(infeasible(format!(
            "distinct annotators: {per_chain} needed per chain, {} available",
            annotators.len()
        )));
    }
    let needed = samples.len() * per_chain;
    let capacity = annotators.len() * cap_pairs;
    if needed > capacity {
        return Err(infeasible(format!(
            "workload cap: {needed} pair assignments needed, {} annotators x {cap_pairs} pairs = {capacity}",
            annotators.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..annotators.len()).collect();
    order.shuffle(&mut rng);
    let mut rank = vec![0; annotators.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut load = vec![0usize; annotators.len()];
    let mut assignments = Vec::with_capacity(needed);
    for (sample_index, sample) in samples.iter().enumerate() {
        let mut pool: Vec<usize> = (0..annotators.len()).collect();
        pool.sort_by_key(|&i| (load[i], rank[i]));
        for &i in &pool[..per_chain] {
            load[i] += 1;
            let (a, b) = if rng.gen_bool(0.5) {
                (&sample.maintained_chain_id, &sample.violated_chain_id)
            } else {
                (&sample.violated_chain_id, &sample.maintained_chain_id)
            };
            assignments.push(Assignment {
                annotator_id: annotators[i].clone(),
                sample_index,
                ce_pair_id: sample.ce_pair_id.clone(),
                chain_a: a.clone(),
                chain_b: b.clone(),
            });
        }
        // Rotate tie-break ranks so equal loads do not always favour the same people.
        rank.iter_mut().for_each(|r| *r = (*r + per_chain) % annotators.len());
    }
    Ok(AssignmentPlan {
        seed,
        per_chain,
        cap_pairs,
        annotators: annotators.to_vec(),
        assignments,
    })
}
