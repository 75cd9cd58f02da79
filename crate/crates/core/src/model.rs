//! Shared domain types: anchor pairs, events, chains, links and verdicts.
//!
//! Every type serializes to JSON with snake_case field names. Types that
//! carry invariants deserialize through their validating constructors, so a
//! value read back from disk is as trustworthy as one built in memory.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("text is empty after normalization: {0:?}")]
    EmptyAfterNormalization(String),
    #[error("cause and effect normalize to the same text: {0:?}")]
    IdenticalAnchors(String),
    #[error("chain {chain_id} has {len} events; at least 3 are required unless flagged StructurallyInvalid")]
    ChainTooShort { chain_id: String, len: usize },
    #[error("link position {position} out of range for chain {chain_id} with {links} links")]
    PositionOutOfRange {
        chain_id: String,
        position: usize,
        links: usize,
    },
    #[error("unknown {what}: {value:?}")]
    UnknownVariant { what: &'static str, value: String },
    #[error("temperature must be finite and non-negative, got {0}")]
    InvalidTemperature(f64),
}

/// Characters trimmed from either edge of an event text.
fn is_edge_punct(c: char) -> bool {
    matches!(
        c,
        '.' | ','
            | ';'
            | ':'
            | '!'
            | '?'
            | '"'
            | '\''
            | '`'
            | '*'
            | '_'
            | '~'
            | '#'
            | '-'
            | '>'
            | '•'
            | '·'
            | '–'
            | '—'
            | '“'
            | '”'
            | '‘'
            | '’'
            | '«'
            | '»'
    )
}

/// Strips one leading list marker such as `1.`, `2)`, `(3)`, `a)` or `-`.
fn strip_list_marker(s: &str) -> &str {
    let bytes = s.as_bytes();
    let mut i = 0;
    let paren = bytes.first() == Some(&b'(');
    if paren {
        i += 1;
    }
    let digits_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let has_digits = i > digits_start;
    let has_letter = !has_digits
        && i < bytes.len()
        && bytes[i].is_ascii_lowercase()
        && matches!(bytes.get(i + 1), Some(b')') | Some(b'.'));
    if has_letter {
        i += 1;
    }
    if (has_digits || has_letter) && i < bytes.len() && matches!(bytes[i], b'.' | b')') {
        let rest = &s[i + 1..];
        // "3.5 degrees" is a number, not a marker: require whitespace after it.
        if rest.starts_with(char::is_whitespace) {
            return rest;
        }
    }
    s
}

/// Collapses whitespace and trims edge punctuation and list markers, keeping case.
pub(crate) fn strip_edges(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut s = collapsed.as_str();
    loop {
        let before = s;
        s = s.trim_matches(|c: char| is_edge_punct(c) || c.is_whitespace());
        s = strip_list_marker(s);
        if s == before {
            break;
        }
    }
    s.to_string()
}

fn normalize_once(text: &str) -> String {
    strip_edges(&text.to_lowercase())
}

/// Conservative normalization used for anchor matching, deduplication and
/// cache keys: lowercase, collapse whitespace, trim edge punctuation and
/// list markers. Nothing else is folded.
pub fn normalize_event_text(text: &str) -> Result<String, ModelError> {
    let mut current = normalize_once(text);
    loop {
        let next = normalize_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    if current.is_empty() {
        return Err(ModelError::EmptyAfterNormalization(text.to_string()));
    }
    Ok(current)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataset {
    PolarIs3CAUS,
    PolarIs4CAUS,
    Other,
}

impl FromStr for Dataset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "polaris3caus" => Ok(Dataset::PolarIs3CAUS),
            "polaris4caus" => Ok(Dataset::PolarIs4CAUS),
            "" | "other" => Ok(Dataset::Other),
            _ => Err(ModelError::UnknownVariant {
                what: "dataset",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Believer,
    Skeptic,
    Unknown,
}

impl FromStr for Group {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "believer" => Ok(Group::Believer),
            "skeptic" => Ok(Group::Skeptic),
            "unknown" => Ok(Group::Unknown),
            _ => Err(ModelError::UnknownVariant {
                what: "group",
                value: s.to_string(),
            }),
        }
    }
}

/// An annotated cause → effect anchor pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CEPairRepr")]
pub struct CEPair {
    pub id: String,
    pub cause_text: String,
    pub effect_text: String,
    pub dataset: Dataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
}

#[derive(Deserialize)]
struct CEPairRepr {
    id: String,
    cause_text: String,
    effect_text: String,
    dataset: Dataset,
    #[serde(default)]
    source_message: Option<String>,
    #[serde(default)]
    group: Option<Group>,
}

impl TryFrom<CEPairRepr> for CEPair {
    type Error = ModelError;

    fn try_from(r: CEPairRepr) -> Result<Self, Self::Error> {
        let mut pair = CEPair::new(r.id, r.cause_text, r.effect_text, r.dataset)?;
        pair.source_message = r.source_message;
        pair.group = r.group;
        Ok(pair)
    }
}

impl CEPair {
    pub fn new(
        id: impl Into<String>,
        cause_text: impl Into<String>,
        effect_text: impl Into<String>,
        dataset: Dataset,
    ) -> Result<Self, ModelError> {
        let cause_text = cause_text.into();
        let effect_text = effect_text.into();
        let cause = normalize_event_text(&cause_text)?;
        let effect = normalize_event_text(&effect_text)?;
        if cause == effect {
            return Err(ModelError::IdenticalAnchors(cause));
        }
        Ok(Self {
            id: id.into(),
            cause_text,
            effect_text,
            dataset,
            source_message: None,
            group: None,
        })
    }

    pub fn with_message(mut self, message: impl Into<String>) -> Self {
        self.source_message = Some(message.into());
        self
    }

    pub fn with_group(mut self, group: Group) -> Self {
        self.group = Some(group);
        self
    }

    pub fn cause_event(&self) -> Event {
        Event::new(self.cause_text.clone()).expect("validated at construction")
    }

    pub fn effect_event(&self) -> Event {
        Event::new(self.effect_text.clone()).expect("validated at construction")
    }
}

/// One step of a chain. Equality and hashing use the normalized form only.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "EventRepr")]
pub struct Event {
    pub text: String,
    pub normalized: String,
}

#[derive(Deserialize)]
struct EventRepr {
    text: String,
}

impl TryFrom<EventRepr> for Event {
    type Error = ModelError;

    fn try_from(r: EventRepr) -> Result<Self, Self::Error> {
        Event::new(r.text)
    }
}

impl Event {
    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        let normalized = normalize_event_text(&text)?;
        Ok(Self { text, normalized })
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.normalized == other.normalized
    }
}

impl Eq for Event {}

impl std::hash::Hash for Event {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.normalized.hash(state);
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// A model configuration: who answered, at what probe temperature, in which run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRef {
    pub provider: String,
    pub model_name: String,
    pub temperature: f64,
    pub run_tag: String,
}

impl ModelRef {
    pub fn new(
        provider: impl Into<String>,
        model_name: impl Into<String>,
        temperature: f64,
        run_tag: impl Into<String>,
    ) -> Result<Self, ModelError> {
        if !temperature.is_finite() || temperature < 0.0 {
            return Err(ModelError::InvalidTemperature(temperature));
        }
        Ok(Self {
            provider: provider.into(),
            model_name: model_name.into(),
            temperature,
            run_tag: run_tag.into(),
        })
    }

    /// The `(provider, model_name, run_tag)` identity, rendered as
    /// `provider/model_name@run_tag`.
    pub fn label(&self) -> String {
        format!("{}/{}@{}", self.provider, self.model_name, self.run_tag)
    }

    pub fn same_config(&self, other: &ModelRef) -> bool {
        self.provider == other.provider
            && self.model_name == other.model_name
            && self.run_tag == other.run_tag
    }
}

impl fmt::Display for ModelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parses `provider:model[@run_tag]`. Temperature defaults to 0.
impl FromStr for ModelRef {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::UnknownVariant {
            what: "model reference (expected provider:model[@tag])",
            value: s.to_string(),
        };
        let (provider, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        let (model, tag) = match rest.rsplit_once('@') {
            Some((m, t)) => (m, t),
            None => (rest, "default"),
        };
        if provider.is_empty() || model.is_empty() || tag.is_empty() {
            return Err(bad());
        }
        ModelRef::new(provider, model, 0.0, tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChainFlag {
    AnchorRepairedHead,
    AnchorRepairedTail,
    ContainsRepeatedEvent,
    StructurallyInvalid,
}

/// An ordered event sequence from the cause anchor to the effect anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalChain {
    pub id: String,
    pub ce_pair_id: String,
    pub generator_model: ModelRef,
    pub events: Vec<Event>,
    pub raw_span: String,
    pub flags: BTreeSet<ChainFlag>,
}

impl CausalChain {
    /// Builds a chain, checking the length invariant. Flags describing
    /// repairs are the caller's responsibility; repeated events are detected
    /// here.
    pub fn new(
        id: impl Into<String>,
        ce_pair_id: impl Into<String>,
        generator_model: ModelRef,
        events: Vec<Event>,
        raw_span: impl Into<String>,
        mut flags: BTreeSet<ChainFlag>,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        if events.len() < 3 && !flags.contains(&ChainFlag::StructurallyInvalid) {
            return Err(ModelError::ChainTooShort {
                chain_id: id,
                len: events.len(),
            });
        }
        if has_repeated_event(&events) {
            flags.insert(ChainFlag::ContainsRepeatedEvent);
        }
        Ok(Self {
            id,
            ce_pair_id: ce_pair_id.into(),
            generator_model,
            events,
            raw_span: raw_span.into(),
            flags,
        })
    }

    /// Number of events, `T`.
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Number of links, `T - 1`.
    pub fn chain_length(&self) -> usize {
        self.events.len().saturating_sub(1)
    }

    pub fn has_flag(&self, flag: ChainFlag) -> bool {
        self.flags.contains(&flag)
    }

    pub fn is_structurally_valid(&self) -> bool {
        !self.has_flag(ChainFlag::StructurallyInvalid)
    }

    pub fn is_anchor_repaired(&self) -> bool {
        self.has_flag(ChainFlag::AnchorRepairedHead) || self.has_flag(ChainFlag::AnchorRepairedTail)
    }

    pub fn link(&self, position: usize) -> Result<IntermediatePair, ModelError> {
        if position + 1 >= self.events.len() {
            return Err(ModelError::PositionOutOfRange {
                chain_id: self.id.clone(),
                position,
                links: self.chain_length(),
            });
        }
        Ok(IntermediatePair {
            chain_id: self.id.clone(),
            position,
            cause_event: self.events[position].clone(),
            effect_event: self.events[position + 1].clone(),
        })
    }
}

pub(crate) fn has_repeated_event(events: &[Event]) -> bool {
    let mut seen = std::collections::HashSet::new();
    events.iter().any(|e| !seen.insert(e.normalized.as_str()))
}

/// One directed link `E_t -> E_{t+1}` of a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntermediatePair {
    pub chain_id: String,
    pub position: usize,
    pub cause_event: Event,
    pub effect_event: Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum ProbeKind {
    A1_Active,
    A2_ReversedActive,
    A1_Passive,
    A2_ReversedPassive,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 4] = [
        ProbeKind::A1_Active,
        ProbeKind::A2_ReversedActive,
        ProbeKind::A1_Passive,
        ProbeKind::A2_ReversedPassive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::A1_Active => "A1_Active",
            ProbeKind::A2_ReversedActive => "A2_ReversedActive",
            ProbeKind::A1_Passive => "A1_Passive",
            ProbeKind::A2_ReversedPassive => "A2_ReversedPassive",
        }
    }

    /// True for the probes that ask about the reversed direction.
    pub fn is_reversed(self) -> bool {
        matches!(self, ProbeKind::A2_ReversedActive | ProbeKind::A2_ReversedPassive)
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Accepts the canonical names as well as the short forms `a1`, `a2`, `a1p`, `a2p`.
impl FromStr for ProbeKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "a1" | "a1active" => Ok(ProbeKind::A1_Active),
            "a2" | "a2reversedactive" => Ok(ProbeKind::A2_ReversedActive),
            "a1p" | "a1passive" => Ok(ProbeKind::A1_Passive),
            "a2p" | "a2reversedpassive" => Ok(ProbeKind::A2_ReversedPassive),
            _ => Err(ModelError::UnknownVariant {
                what: "probe kind",
                value: s.to_string(),
            }),
        }
    }
}

/// A normalized yes/no answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Causal,
    NonCausal,
    Invalid,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalizes_case_whitespace_and_edges() {
        assert_eq!(
            normalize_event_text("  Ocean Acidification. ").unwrap(),
            "ocean acidification"
        );
        assert_eq!(normalize_event_text("CO2\t emissions").unwrap(), "co2 emissions");
        assert_eq!(normalize_event_text("1. \"Rising seas\"").unwrap(), "rising seas");
        assert_eq!(normalize_event_text("- **drought**").unwrap(), "drought");
        assert_eq!(normalize_event_text("3.5 degrees of warming").unwrap(), "3.5 degrees of warming");
    }

    #[test]
    fn punctuation_only_is_empty() {
        assert_eq!(
            normalize_event_text("..."),
            Err(ModelError::EmptyAfterNormalization("...".into()))
        );
        assert!(normalize_event_text("   ").is_err());
    }

    #[test]
    fn ce_pair_rejects_empty_and_identical_anchors() {
        assert!(CEPair::new("x", "", "y", Dataset::Other).is_err());
        assert!(matches!(
            CEPair::new("x", "Drought", "drought.", Dataset::Other),
            Err(ModelError::IdenticalAnchors(_))
        ));
        let json = r#"{"id":"p","cause_text":"  ","effect_text":"b","dataset":"Other"}"#;
        assert!(serde_json::from_str::<CEPair>(json).is_err());
    }

    #[test]
    fn events_compare_by_normalized_text() {
        let a = Event::new("Soil Erosion.").unwrap();
        let b = Event::new("soil erosion").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Event::new("soil loss").unwrap());
    }

    #[test]
    fn chain_requires_three_events_unless_invalid() {
        let m = ModelRef::new("p", "m", 0.0, "t").unwrap();
        let ev = |s: &str| Event::new(s).unwrap();
        let err = CausalChain::new("c", "p", m.clone(), vec![ev("a"), ev("b")], "", BTreeSet::new());
        assert!(matches!(err, Err(ModelError::ChainTooShort { len: 2, .. })));
        let flags = BTreeSet::from([ChainFlag::StructurallyInvalid]);
        assert!(CausalChain::new("c", "p", m.clone(), vec![ev("a"), ev("b")], "", flags).is_ok());
        let c = CausalChain::new("c", "p", m, vec![ev("a"), ev("b"), ev("a")], "", BTreeSet::new())
            .unwrap();
        assert!(c.has_flag(ChainFlag::ContainsRepeatedEvent));
        assert_eq!(c.chain_length(), 2);
        assert!(c.link(2).is_err());
    }

    #[test]
    fn model_ref_parses_cli_form() {
        let m: ModelRef = "openai:gpt-4o@r1".parse().unwrap();
        assert_eq!(m.label(), "openai/gpt-4o@r1");
        let m: ModelRef = "replay:alpha".parse().unwrap();
        assert_eq!(m.run_tag, "default");
        assert!("nocolon".parse::<ModelRef>().is_err());
    }

    #[test]
    fn probe_kind_short_names() {
        assert_eq!("a2p".parse::<ProbeKind>().unwrap(), ProbeKind::A2_ReversedPassive);
        assert_eq!("A1_Active".parse::<ProbeKind>().unwrap(), ProbeKind::A1_Active);
        assert_eq!(
            serde_json::to_string(&ProbeKind::A1_Passive).unwrap(),
            "\"A1_Passive\""
        );
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,40}") {
            if let Ok(once) = normalize_event_text(&s) {
                prop_assert_eq!(normalize_event_text(&once).unwrap(), once);
            }
        }

        #[test]
        fn normalization_is_idempotent_on_markup(s in "[ \\t\\n.\\-*\"'0-9()a-zA-Z]{0,30}") {
            if let Ok(once) = normalize_event_text(&s) {
                prop_assert_eq!(normalize_event_text(&once).unwrap(), once);
            }
        }
    }
}
