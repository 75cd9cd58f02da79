//! Splitting chains into links and deduplicating links for probing.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CausalChain, Event, IntermediatePair, ModelRef};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecomposeError {
    #[error("chain {0} is structurally invalid and cannot be decomposed")]
    StructurallyInvalidChain(String),
}

/// Returns the `T - 1` adjacent links of a chain in order.
pub fn decompose_chain(chain: &CausalChain) -> Result<Vec<IntermediatePair>, DecomposeError> {
    if !chain.is_structurally_valid() {
        return Err(DecomposeError::StructurallyInvalidChain(chain.id.clone()));
    }
    Ok(chain
        .events
        .windows(2)
        .enumerate()
        .map(|(position, w)| IntermediatePair {
            chain_id: chain.id.clone(),
            position,
            cause_event: w[0].clone(),
            effect_event: w[1].clone(),
        })
        .collect())
}

/// Direction-sensitive identity of a link: normalized cause and effect.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub cause: String,
    pub effect: String,
}

impl PairKey {
    pub fn of(pair: &IntermediatePair) -> Self {
        Self {
            cause: pair.cause_event.normalized.clone(),
            effect: pair.effect_event.normalized.clone(),
        }
    }
}

impl std::fmt::Display for PairKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} -> {}", self.cause, self.effect)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Occurrence {
    pub chain_id: String,
    pub position: usize,
}

/// A unique link with the surface texts of its first occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquePairRecord {
    pub key: PairKey,
    pub cause_event: Event,
    pub effect_event: Event,
}

impl UniquePairRecord {
    /// A representative link for rendering probes.
    pub fn as_pair(&self, first: &Occurrence) -> IntermediatePair {
        IntermediatePair {
            chain_id: first.chain_id.clone(),
            position: first.position,
            cause_event: self.cause_event.clone(),
            effect_event: self.effect_event.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct OccurrenceList {
    key: PairKey,
    sites: Vec<Occurrence>,
}

#[derive(Serialize, Deserialize)]
struct PairIndexRepr {
    generator_model: Option<ModelRef>,
    unique_pairs: Vec<UniquePairRecord>,
    occurrences: Vec<OccurrenceList>,
}

/// Unique links of one generator's chains, in first-occurrence order, with
/// every `(chain, position)` where each occurs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PairIndexRepr", try_from = "PairIndexRepr")]
pub struct PairIndex {
    generator_model: Option<ModelRef>,
    records: Vec<UniquePairRecord>,
    sites: Vec<Vec<Occurrence>>,
    lookup: HashMap<PairKey, usize>,
}

impl From<PairIndex> for PairIndexRepr {
    fn from(index: PairIndex) -> Self {
        let occurrences = index
            .records
            .iter()
            .zip(index.sites)
            .map(|(r, sites)| OccurrenceList {
                key: r.key.clone(),
                sites,
            })
            .collect();
        PairIndexRepr {
            generator_model: index.generator_model,
            unique_pairs: index.records,
            occurrences,
        }
    }
}

impl TryFrom<PairIndexRepr> for PairIndex {
    type Error = String;

    fn try_from(repr: PairIndexRepr) -> Result<Self, Self::Error> {
        let lookup: HashMap<PairKey, usize> = repr
            .unique_pairs
            .iter()
            .enumerate()
            .map(|(i, r)| (r.key.clone(), i))
            .collect();
        if lookup.len() != repr.unique_pairs.len() {
            return Err("duplicate key in unique_pairs".into());
        }
        let mut sites = vec![Vec::new(); repr.unique_pairs.len()];
        for list in repr.occurrences {
            let i = *lookup
                .get(&list.key)
                .ok_or_else(|| format!("occurrences for unknown key {}", list.key))?;
            sites[i] = list.sites;
        }
        Ok(PairIndex {
            generator_model: repr.generator_model,
            records: repr.unique_pairs,
            sites,
            lookup,
        })
    }
}

impl PairIndex {
    pub fn generator_model(&self) -> Option<&ModelRef> {
        self.generator_model.as_ref()
    }

    pub fn records(&self) -> &[UniquePairRecord] {
        &self.records
    }

    pub fn get(&self, key: &PairKey) -> Option<&UniquePairRecord> {
        self.lookup.get(key).map(|&i| &self.records[i])
    }

    pub fn occurrences(&self, key: &PairKey) -> &[Occurrence] {
        self.lookup.get(key).map(|&i| self.sites[i].as_slice()).unwrap_or(&[])
    }

    /// Unique links paired with their occurrence lists.
    pub fn iter(&self) -> impl Iterator<Item = (&UniquePairRecord, &[Occurrence])> {
        self.records.iter().zip(self.sites.iter().map(Vec::as_slice))
    }

    pub fn unique_count(&self) -> usize {
        self.records.len()
    }

    pub fn occurrence_count(&self) -> usize {
        self.sites.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Rebuilds the ordered link keys of one chain from the index.
    pub fn chain_keys(&self, chain_id: &str) -> Vec<PairKey> {
        let mut found: Vec<(usize, &PairKey)> = self
            .iter()
            .flat_map(|(r, sites)| {
                sites
                    .iter()
                    .filter(|o| o.chain_id == chain_id)
                    .map(move |o| (o.position, &r.key))
            })
            .collect();
        found.sort_by_key(|(p, _)| *p);
        found.into_iter().map(|(_, k)| k.clone()).collect()
    }
}

/// Indexes every structurally valid chain. Invalid chains are skipped.
pub fn build_pair_index<'a, I>(chains: I) -> PairIndex
where
    I: IntoIterator<Item = &'a CausalChain>,
{
    let mut index = PairIndex {
        generator_model: None,
        records: Vec::new(),
        sites: Vec::new(),
        lookup: HashMap::new(),
    };
    for chain in chains {
        let Ok(pairs) = decompose_chain(chain) else {
            continue;
        };
        if index.generator_model.is_none() {
            index.generator_model = Some(chain.generator_model.clone());
        }
        for pair in pairs {
            let key = PairKey::of(&pair);
            let slot = match index.lookup.get(&key) {
                Some(&i) => i,
                None => {
                    index.records.push(UniquePairRecord {
                        key: key.clone(),
                        cause_event: pair.cause_event.clone(),
                        effect_event: pair.effect_event.clone(),
                    });
                    index.sites.push(Vec::new());
                    index.lookup.insert(key, index.records.len() - 1);
                    index.records.len() - 1
                }
            };
            index.sites[slot].push(Occurrence {
                chain_id: pair.chain_id,
                position: pair.position,
            });
        }
    }
    index
}
