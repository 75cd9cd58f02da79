//! Parsing of raw generation output into chains.
//!
//! The expected grammar is `event <step> event <step> ... <chain> ...`.
//! Real outputs add intros, numbered lists, escaped tags and stray blank
//! steps; each tolerated deviation is reported as a [`ChainIssue`].

use std::collections::{BTreeSet, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{strip_edges, CEPair, CausalChain, ChainFlag, Event, ModelRef};

/// Chains with more events than this are rejected as unparseable.
pub const MAX_CHAIN_EVENTS: usize = 600;

const STEP: char = '\u{1F}';
const CHAIN: char = '\u{1E}';

static STEP_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\\?(?:<|&lt;)\s*/?\s*step\s*\\?(?:>|&gt;)").expect("valid regex")
});
static CHAIN_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\\?(?:<|&lt;)\s*/?\s*chain\s*\\?(?:>|&gt;)").expect("valid regex")
});
static LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:causal\s+)?(?:chain|step)\s*#?\d+\s*[:.)\-–—]?\s*").expect("valid regex")
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IssueCode {
    PreambleStripped,
    EmptyStep,
    TooShort,
    AnchorRepairedHead,
    AnchorRepairedTail,
    RepeatedEvent,
    UnparseableSegment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainIssue {
    pub code: IssueCode,
    /// Index into [`ParsedChainSet::chains`] when the issue concerns one chain.
    pub chain_index: Option<usize>,
    pub detail: String,
}

impl ChainIssue {
    fn new(code: IssueCode, chain_index: Option<usize>, detail: impl Into<String>) -> Self {
        Self {
            code,
            chain_index,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedChainSet {
    pub ce_pair_id: String,
    pub generator_model: ModelRef,
    pub chains: Vec<CausalChain>,
    pub issues: Vec<ChainIssue>,
    /// Number of structurally valid chains.
    pub n_chains: usize,
}

impl ParsedChainSet {
    pub fn valid_chains(&self) -> impl Iterator<Item = &CausalChain> {
        self.chains.iter().filter(|c| c.is_structurally_valid())
    }

    /// Renders the chains back into separator grammar.
    pub fn to_separated_text(&self) -> String {
        self.chains
            .iter()
            .map(|c| {
                c.events
                    .iter()
                    .map(|e| e.text.as_str())
                    .collect::<Vec<_>>()
                    .join(" <step> ")
            })
            .collect::<Vec<_>>()
            .join(" <chain> ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no chains found in generation output ({} issues)", issues.len())]
    NoChainsFound { issues: Vec<ChainIssue> },
}

fn snippet(s: &str) -> String {
    let flat = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() > 80 {
        format!("{}…", flat.chars().take(80).collect::<String>())
    } else {
        flat
    }
}

/// Replaces every separator variant with a private marker character.
fn canonicalize(raw: &str) -> String {
    let cleaned: String = raw
        .chars()
        .map(|c| if c == STEP || c == CHAIN { ' ' } else { c })
        .collect();
    let with_steps = STEP_TOKEN.replace_all(&cleaned, STEP.to_string());
    CHAIN_TOKEN.replace_all(&with_steps, CHAIN.to_string()).into_owned()
}

fn segments(canonical: &str) -> Vec<&str> {
    if !canonical.contains(CHAIN) {
        let multi_step_lines = canonical
            .lines()
            .filter(|l| l.matches(STEP).count() >= 2)
            .count();
        if multi_step_lines >= 2 {
            return canonical.lines().collect();
        }
    }
    canonical.split(CHAIN).collect()
}

fn clean_step(part: &str) -> String {
    let mut s = strip_edges(part);
    loop {
        let stripped = strip_edges(&LABEL.replace(&s, ""));
        if stripped == s {
            return s;
        }
        s = stripped;
    }
}

fn non_empty_lines(s: &str) -> Vec<&str> {
    s.lines().filter(|l| !l.trim().is_empty()).collect()
}

/// Turns one provider reply into chains for `ce`.
pub fn parse_generation_output(
    raw: &str,
    ce: &CEPair,
    model: &ModelRef,
) -> Result<ParsedChainSet, ParseError> {
    let canonical = canonicalize(raw);
    let cause = ce.cause_event();
    let effect = ce.effect_event();
    let mut chains: Vec<CausalChain> = Vec::new();
    let mut issues = Vec::new();

    for segment in segments(&canonical) {
        if !segment.contains(STEP) {
            if segment.trim().is_empty() {
                continue;
            }
            let code = if chains.is_empty() {
                IssueCode::PreambleStripped
            } else {
                IssueCode::UnparseableSegment
            };
            issues.push(ChainIssue::new(code, None, snippet(segment)));
            continue;
        }

        let index = chains.len();
        let mut parts: Vec<String> = segment.split(STEP).map(str::to_string).collect();
        let first_lines = non_empty_lines(&parts[0]);
        if first_lines.len() > 1 {
            let dropped = first_lines[..first_lines.len() - 1].join("\n");
            issues.push(ChainIssue::new(IssueCode::PreambleStripped, None, snippet(&dropped)));
            parts[0] = first_lines[first_lines.len() - 1].to_string();
        }
        let last = parts.len() - 1;
        let last_lines = non_empty_lines(&parts[last]);
        if last_lines.len() > 1 {
            let dropped = last_lines[1..].join("\n");
            issues.push(ChainIssue::new(
                IssueCode::PreambleStripped,
                None,
                format!("trailing text: {}", snippet(&dropped)),
            ));
            parts[last] = last_lines[0].to_string();
        }

        let mut events = Vec::with_capacity(parts.len() + 2);
        let mut empty_steps = 0usize;
        for part in &parts {
            match Event::new(clean_step(part)) {
                Ok(e) => events.push(e),
                Err(_) => empty_steps += 1,
            }
        }
        if events.is_empty() {
            issues.push(ChainIssue::new(
                IssueCode::UnparseableSegment,
                None,
                format!("segment has separators but no events: {}", snippet(segment)),
            ));
            continue;
        }
        if events.len() > MAX_CHAIN_EVENTS {
            issues.push(ChainIssue::new(
                IssueCode::UnparseableSegment,
                None,
                format!("segment has {} events, above the cap of {MAX_CHAIN_EVENTS}", events.len()),
            ));
            continue;
        }
        if empty_steps > 0 {
            issues.push(ChainIssue::new(
                IssueCode::EmptyStep,
                Some(index),
                format!("{empty_steps} empty step(s) dropped"),
            ));
        }

        let mut flags = BTreeSet::new();
        if events[0] != cause {
            events.insert(0, cause.clone());
            flags.insert(ChainFlag::AnchorRepairedHead);
            issues.push(ChainIssue::new(
                IssueCode::AnchorRepairedHead,
                Some(index),
                format!("prepended cause anchor {:?}", cause.text),
            ));
        }
        if events[events.len() - 1] != effect {
            events.push(effect.clone());
            flags.insert(ChainFlag::AnchorRepairedTail);
            issues.push(ChainIssue::new(
                IssueCode::AnchorRepairedTail,
                Some(index),
                format!("appended effect anchor {:?}", effect.text),
            ));
        }
        if events.len() < 3 {
            flags.insert(ChainFlag::StructurallyInvalid);
            issues.push(ChainIssue::new(
                IssueCode::TooShort,
                Some(index),
                format!("{} events after repair", events.len()),
            ));
        }
        if let Some(dup) = first_repeat(&events) {
            issues.push(ChainIssue::new(
                IssueCode::RepeatedEvent,
                Some(index),
                format!("{dup:?} occurs more than once"),
            ));
        }

        let raw_span = segment.trim().replace(STEP, "<step>");
        let chain = CausalChain::new(
            format!("{}:{}:{}", ce.id, model.label(), index),
            ce.id.clone(),
            model.clone(),
            events,
            raw_span,
            flags,
        )
        .expect("short chains are flagged invalid above");
        chains.push(chain);
    }

    if chains.is_empty() {
        return Err(ParseError::NoChainsFound { issues });
    }
    let n_chains = chains.iter().filter(|c| c.is_structurally_valid()).count();
    Ok(ParsedChainSet {
        ce_pair_id: ce.id.clone(),
        generator_model: model.clone(),
        chains,
        issues,
        n_chains,
    })
}

fn first_repeat(events: &[Event]) -> Option<&str> {
    let mut seen = HashSet::new();
    events
        .iter()
        .find(|e| !seen.insert(e.normalized.as_str()))
        .map(|e| e.normalized.as_str())
}

/// Structural audit of an existing chain against its anchors.
pub fn validate_chain(chain: &CausalChain, ce: &CEPair) -> Vec<ChainIssue> {
    let mut issues = Vec::new();
    let cause = ce.cause_event();
    let effect = ce.effect_event();
    match chain.events.first() {
        Some(first) if *first != cause => issues.push(ChainIssue::new(
            IssueCode::AnchorRepairedHead,
            None,
            format!("first event {:?} does not match cause anchor {:?}", first.text, cause.text),
        )),
        _ if chain.has_flag(ChainFlag::AnchorRepairedHead) => issues.push(ChainIssue::new(
            IssueCode::AnchorRepairedHead,
            None,
            "cause anchor was inserted during parsing",
        )),
        _ => {}
    }
    match chain.events.last() {
        Some(last) if *last != effect => issues.push(ChainIssue::new(
            IssueCode::AnchorRepairedTail,
            None,
            format!("last event {:?} does not match effect anchor {:?}", last.text, effect.text),
        )),
        _ if chain.has_flag(ChainFlag::AnchorRepairedTail) => issues.push(ChainIssue::new(
            IssueCode::AnchorRepairedTail,
            None,
            "effect anchor was appended during parsing",
        )),
        _ => {}
    }
    if chain.events.len() < 3 {
        issues.push(ChainIssue::new(
            IssueCode::TooShort,
            None,
            format!("{} events", chain.events.len()),
        ));
    }
    if let Some(dup) = first_repeat(&chain.events) {
        issues.push(ChainIssue::new(
            IssueCode::RepeatedEvent,
            None,
            format!("{dup:?} occurs more than once"),
        ));
    }
    if chain.events.iter().any(|e| e.normalized.is_empty()) {
        issues.push(ChainIssue::new(IssueCode::EmptyStep, None, "event with empty text"));
    }
    issues
}
