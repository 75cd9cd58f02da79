use serde::{Deserialize, Serialize};

use super::integrity::chain_link_verdicts;
use super::stats::{pearson_r, CorrelationResult};
use super::MetricsError;
use crate::model::{CausalChain, Verdict};
use crate::probe::VerdictTable;

/// Outcome of one correlation analysis. Uncomputable cases keep the error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Analysis {
    Computed {
        #[serde(flatten)]
        result: CorrelationResult,
    },
    Unavailable {
        code: String,
        reason: String,
    },
}

impl Analysis {
    fn of(x: &[f64], y: &[f64]) -> Self {
        match pearson_r(x, y) {
            Ok(result) => Analysis::Computed { result },
            Err(e) => Analysis::Unavailable {
                code: e.code().into(),
                reason: e.to_string(),
            },
        }
    }

    pub fn result(&self) -> Option<&CorrelationResult> {
        match self {
            Analysis::Computed { result } => Some(result),
            Analysis::Unavailable { .. } => None,
        }
    }

    pub fn error_code(&self) -> Option<&str> {
        match self {
            Analysis::Computed { .. } => None,
            Analysis::Unavailable { code, .. } => Some(code),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainQualityReport {
    /// Chain length (links) vs that chain's share of links judged causal.
    pub length_vs_causal_a1: Analysis,
    pub length_vs_causal_a2: Analysis,
    /// Chains per CE pair vs the pooled share of causal links.
    pub chains_vs_causal_a1: Analysis,
    pub chains_vs_causal_a2: Analysis,
    /// Chains per CE pair vs mean chain length.
    pub chains_vs_mean_length: Analysis,
    pub n_chains: usize,
    pub n_ce_pairs: usize,
}

/// `groups` holds the eligible chains of one generator per CE pair; groups
/// without chains are ignored.
pub fn chain_quality_correlations(
    groups: &[(String, Vec<&CausalChain>)],
    table: &VerdictTable,
) -> Result<ChainQualityReport, MetricsError> {
    let mut len_x = Vec::new();
    let mut frac_a1 = Vec::new();
    let mut frac_a2 = Vec::new();
    let mut ce_count = Vec::new();
    let mut ce_a1 = Vec::new();
    let mut ce_a2 = Vec::new();
    let mut ce_mean_len = Vec::new();

    for (_, chains) in groups.iter().filter(|(_, c)| !c.is_empty()) {
        let (mut links, mut yes1, mut yes2) = (0usize, 0usize, 0usize);
        for chain in chains {
            let verdicts = chain_link_verdicts(chain, table)?;
            let n = verdicts.len();
            let y1 = verdicts.values().filter(|v| v.a1 == Verdict::Causal).count();
            let y2 = verdicts.values().filter(|v| v.a2 == Verdict::Causal).count();
            len_x.push(n as f64);
            frac_a1.push(y1 as f64 / n as f64);
            frac_a2.push(y2 as f64 / n as f64);
            links += n;
            yes1 += y1;
            yes2 += y2;
        }
        ce_count.push(chains.len() as f64);
        ce_a1.push(yes1 as f64 / links as f64);
        ce_a2.push(yes2 as f64 / links as f64);
        ce_mean_len.push(links as f64 / chains.len() as f64);
    }

    Ok(ChainQualityReport {
        length_vs_causal_a1: Analysis::of(&len_x, &frac_a1),
        length_vs_causal_a2: Analysis::of(&len_x, &frac_a2),
        chains_vs_causal_a1: Analysis::of(&ce_count, &ce_a1),
        chains_vs_causal_a2: Analysis::of(&ce_count, &ce_a2),
        chains_vs_mean_length: Analysis::of(&ce_count, &ce_mean_len),
        n_chains: len_x.len(),
        n_ce_pairs: ce_count.len(),
    })
}
