//! Prompt templates for chain generation and the four link probes.
//!
//! Templates are checked-in UTF-8 assets under `assets/templates/`. Their
//! bytes are hashed into a template version so that any edit to the wording
//! invalidates replay fixtures and cached verdicts.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{CEPair, IntermediatePair, ProbeKind};

/// Slot filled with the cause anchor of a CE pair.
pub const SLOT_CAUSE: &str = "E_c";
/// Slot filled with the effect anchor of a CE pair.
pub const SLOT_EFFECT: &str = "E_f";
/// Slot filled with the earlier event of a link.
pub const SLOT_LINK_CAUSE: &str = "E_t";
/// Slot filled with the later event of a link.
pub const SLOT_LINK_EFFECT: &str = "E_t+1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateId {
    Gen,
    A1,
    A2,
    A1P,
    A2P,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::Gen,
        TemplateId::A1,
        TemplateId::A2,
        TemplateId::A1P,
        TemplateId::A2P,
    ];

    pub fn for_probe(kind: ProbeKind) -> Self {
        match kind {
            ProbeKind::A1_Active => TemplateId::A1,
            ProbeKind::A2_ReversedActive => TemplateId::A2,
            ProbeKind::A1_Passive => TemplateId::A1P,
            ProbeKind::A2_ReversedPassive => TemplateId::A2P,
        }
    }

    /// Raw template asset.
    pub fn source(self) -> &'static str {
        match self {
            TemplateId::Gen => include_str!("../assets/templates/gen.txt"),
            TemplateId::A1 => include_str!("../assets/templates/a1.txt"),
            TemplateId::A2 => include_str!("../assets/templates/a2.txt"),
            TemplateId::A1P => include_str!("../assets/templates/a1p.txt"),
            TemplateId::A2P => include_str!("../assets/templates/a2p.txt"),
        }
    }

    /// SHA-256 of the asset bytes, hex encoded.
    pub fn version(self) -> String {
        hex::encode(Sha256::digest(self.source().as_bytes()))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Gen => "Gen",
            TemplateId::A1 => "A1",
            TemplateId::A2 => "A2",
            TemplateId::A1P => "A1P",
            TemplateId::A2P => "A2P",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Versions of every template, keyed by id.
pub fn template_versions() -> BTreeMap<TemplateId, String> {
    TemplateId::ALL.iter().map(|t| (*t, t.version())).collect()
}

/// A fully rendered prompt plus the slot values that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub template_id: TemplateId,
    pub slots: BTreeMap<String, String>,
}

/// Fills `{name}` markers in a single left-to-right pass, so slot values
/// that happen to contain braces are never re-expanded.
fn fill(template: &str, slots: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if slots.contains_key(&after[..close]) => {
                out.push_str(&slots[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn render(template_id: TemplateId, slots: BTreeMap<String, String>) -> PromptText {
    let source = template_id.source();
    let text = fill(source, &slots);
    debug_assert!(
        slots.keys().all(|k| source.contains(&format!("{{{k}}}"))),
        "slot not present in template {template_id}"
    );
    PromptText {
        text,
        template_id,
        slots,
    }
}

/// Renders the chain-generation prompt for a CE pair. The pair's own
/// validation guarantees nonempty, distinct anchors.
pub fn render_generation_prompt(ce: &CEPair) -> PromptText {
    let slots = BTreeMap::from([
        (SLOT_CAUSE.to_string(), ce.cause_text.trim().to_string()),
        (SLOT_EFFECT.to_string(), ce.effect_text.trim().to_string()),
    ]);
    render(TemplateId::Gen, slots)
}

/// Renders one of the four yes/no probes for a link.
pub fn render_probe_prompt(kind: ProbeKind, pair: &IntermediatePair) -> PromptText {
    render_probe_texts(kind, &pair.cause_event.text, &pair.effect_event.text)
}

pub(crate) fn render_probe_texts(kind: ProbeKind, cause: &str, effect: &str) -> PromptText {
    let slots = BTreeMap::from([
        (SLOT_LINK_CAUSE.to_string(), cause.trim().to_string()),
        (SLOT_LINK_EFFECT.to_string(), effect.trim().to_string()),
    ]);
    render(TemplateId::for_probe(kind), slots)
}
