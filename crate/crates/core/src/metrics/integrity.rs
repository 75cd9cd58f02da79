use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::decompose::PairKey;
use crate::model::{CausalChain, ModelRef, ProbeKind, Verdict};
use crate::probe::VerdictTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkVerdicts {
    pub a1: Verdict,
    pub a2: Verdict,
}

impl LinkVerdicts {
    /// Forward judged causal and reverse judged non-causal.
    pub fn is_sound(&self) -> bool {
        self.a1 == Verdict::Causal && self.a2 == Verdict::NonCausal
    }
}

/// True iff every link of the chain has `a1 = Causal` and `a2 = NonCausal`.
pub fn chain_integrity(
    chain: &CausalChain,
    verdicts: &BTreeMap<usize, LinkVerdicts>,
) -> Result<bool, MetricsError> {
    let mut sound = true;
    for position in 0..chain.len().saturating_sub(1) {
        let v = verdicts.get(&position).ok_or_else(|| MetricsError::MissingLinkVerdict {
            chain_id: chain.id.clone(),
            position,
        })?;
        sound &= v.is_sound();
    }
    Ok(sound)
}

/// Looks up A1 and A2 verdicts for every link of the chain.
pub fn chain_link_verdicts(
    chain: &CausalChain,
    table: &VerdictTable,
) -> Result<BTreeMap<usize, LinkVerdicts>, MetricsError> {
    chain
        .events
        .windows(2)
        .enumerate()
        .map(|(position, w)| {
            let key = PairKey {
                cause: w[0].normalized.clone(),
                effect: w[1].normalized.clone(),
            };
            let a1 = table.get(&key, ProbeKind::A1_Active);
            let a2 = table.get(&key, ProbeKind::A2_ReversedActive);
            match (a1, a2) {
                (Some(a1), Some(a2)) => Ok((position, LinkVerdicts { a1, a2 })),
                _ => Err(MetricsError::MissingLinkVerdict {
                    chain_id: chain.id.clone(),
                    position,
                }),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCount {
    pub valid: usize,
    pub total: usize,
}

/// Rows are evaluators, columns are generators. Cells without chains are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrityMatrix {
    pub generators: Vec<ModelRef>,
    pub evaluators: Vec<ModelRef>,
    pub proportion_valid: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<Option<CellCount>>>,
}

impl IntegrityMatrix {
    pub fn cell(&self, evaluator: usize, generator: usize) -> Option<f64> {
        self.proportion_valid.get(evaluator)?.get(generator).copied().flatten()
    }

    /// Long-format CSV, one row per reported cell.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["evaluator", "generator", "valid", "total", "proportion_valid"])
            .expect("in-memory write");
        for (ei, eval) in self.evaluators.iter().enumerate() {
            for (gi, gen) in self.generators.iter().enumerate() {
                if let Some(c) = self.counts[ei][gi] {
                    let p = c.valid as f64 / c.total as f64;
                    w.write_record([
                        eval.label(),
                        gen.label(),
                        c.valid.to_string(),
                        c.total.to_string(),
                        format!("{p:.6}"),
                    ])
                    .expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
    }
}

/// Cell `(e, g)` is the share of generator `g`'s chains that pass
/// `chain_integrity` under evaluator `e`'s verdicts. `verdicts` is keyed by
/// `(generator label, evaluator label)`.
pub fn integrity_matrix(
    chains: &[(ModelRef, Vec<&CausalChain>)],
    evaluators: &[ModelRef],
    verdicts: &BTreeMap<(String, String), VerdictTable>,
) -> Result<IntegrityMatrix, MetricsError> {
    let mut proportion_valid = Vec::with_capacity(evaluators.len());
    let mut counts = Vec::with_capacity(evaluators.len());
    for eval in evaluators {
        let mut p_row = Vec::with_capacity(chains.len());
        let mut c_row = Vec::with_capacity(chains.len());
        for (gen, gen_chains) in chains {
            if gen_chains.is_empty() {
                p_row.push(None);
                c_row.push(None);
                continue;
            }
            let incomplete = |detail: String| MetricsError::IncompleteVerdicts {
                generator: gen.label(),
                evaluator: eval.label(),
                detail,
            };
            let table = verdicts
                .get(&(gen.label(), eval.label()))
                .ok_or_else(|| incomplete("no verdicts".into()))?;
            let mut valid = 0;
            for chain in gen_chains {
                let link_verdicts =
                    chain_link_verdicts(chain, table).map_err(|e| incomplete(e.to_string()))?;
                if chain_integrity(chain, &link_verdicts)? {
                    valid += 1;
                }
            }
            let total = gen_chains.len();
            p_row.push(Some(valid as f64 / total as f64));
            c_row.push(Some(CellCount { valid, total }));
        }
        proportion_valid.push(p_row);
        counts.push(c_row);
    }
    Ok(IntegrityMatrix {
        generators: chains.iter().map(|(g, _)| g.clone()).collect(),
        evaluators: evaluators.to_vec(),
        proportion_valid,
        counts,
    })
}
