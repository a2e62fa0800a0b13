//! Transition-sentence template banks and dialogue augmentation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, DomainLabel, Speaker, SlotLabel, PAIRS};
use crate::error::{Error, Result};
use crate::tie::TransitionInfo;
use crate::tsg::{PromptKind, TransitionPrompt};

pub const VALUE: &str = "[VALUE]";
pub const MARKER: &str = "[TRANSITION]";

const DEFAULT_BANK: &str = include_str!("../../data/templates.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateKey {
    Domain(DomainLabel),
    Pair(DomainLabel, SlotLabel),
}

impl TemplateKey {
    pub fn domain(self) -> DomainLabel {
        match self {
            TemplateKey::Domain(d) | TemplateKey::Pair(d, _) => d,
        }
    }

    pub fn has_value_slot(self) -> bool {
        matches!(self, TemplateKey::Pair(..))
    }
}

impl fmt::Display for TemplateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateKey::Domain(d) => write!(f, "domain.{d}"),
            TemplateKey::Pair(d, s) => write!(f, "pair.{d}.{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub key: TemplateKey,
    pub pattern: String,
    pub has_value_slot: bool,
}

impl Template {
    pub fn new(key: TemplateKey, pattern: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        check_pattern(key, &pattern).map_err(|reason| Error::Template { line: 0, reason })?;
        Ok(Self {
            key,
            has_value_slot: key.has_value_slot(),
            pattern,
        })
    }

    /// Substitute `[VALUE]` in one pass; the value itself is never rescanned.
    pub fn realize(&self, value: Option<&str>) -> Result<String> {
        match (self.has_value_slot, value) {
            (true, Some(v)) => Ok(self.pattern.replacen(VALUE, v, 1)),
            (false, None) => Ok(self.pattern.clone()),
            (true, None) => Err(Error::Prompt(format!("template for {} needs a value", self.key))),
            (false, Some(_)) => Err(Error::Prompt(format!("template for {} takes no value", self.key))),
        }
    }
}

fn check_pattern(key: TemplateKey, pattern: &str) -> std::result::Result<(), String> {
    if pattern.trim().is_empty() {
        return Err("empty pattern".into());
    }
    if pattern.contains(MARKER) {
        return Err(format!("pattern must not contain {MARKER}"));
    }
    if key.domain().is_unk() {
        return Err("UNK has no templates".into());
    }
    let n = pattern.matches(VALUE).count();
    match (key.has_value_slot(), n) {
        (true, 1) | (false, 0) => Ok(()),
        (true, n) => Err(format!("{key} template needs exactly one {VALUE}, found {n}: {pattern:?}")),
        (false, _) => Err(format!("{key} template must not contain {VALUE}: {pattern:?}")),
    }
}

/// Templates grouped by key; every present key has at least one template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateBank {
    groups: BTreeMap<TemplateKey, Vec<Template>>,
}

impl Default for TemplateBank {
    fn default() -> Self {
        parse_toml(DEFAULT_BANK).expect("embedded template bank is valid")
    }
}

impl TemplateBank {
    pub fn from_templates(templates: impl IntoIterator<Item = Template>) -> Result<Self> {
        let mut groups: BTreeMap<TemplateKey, Vec<Template>> = BTreeMap::new();
        for t in templates {
            groups.entry(t.key).or_default().push(t);
        }
        if groups.is_empty() {
            return Err(Error::NoTemplates);
        }
        Ok(Self { groups })
    }

    pub fn get(&self, key: TemplateKey) -> Result<&[Template]> {
        self.groups
            .get(&key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingTemplateKey(key.to_string()))
    }

    pub fn keys(&self) -> impl Iterator<Item = TemplateKey> + '_ {
        self.groups.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Template> {
        self.groups.values().flatten()
    }

    pub fn count(&self, key: TemplateKey) -> usize {
        self.groups.get(&key).map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn choose<R: Rng + ?Sized>(&self, key: TemplateKey, rng: &mut R) -> Result<&Template> {
        Ok(self.get(key)?.choose(rng).expect("groups are non-empty"))
    }
}

#[derive(Serialize, Deserialize)]
struct RawBank<S> {
    #[serde(default = "BTreeMap::new")]
    domain: BTreeMap<String, Vec<S>>,
    #[serde(default = "BTreeMap::new")]
    pair: BTreeMap<String, BTreeMap<String, Vec<S>>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn build_bank<S>(raw: RawBank<S>, text_of: impl Fn(&S) -> &str, line: impl Fn(&S) -> usize) -> Result<TemplateBank> {
    let mut templates = Vec::new();
    let mut push = |key: TemplateKey, items: &[S]| -> Result<()> {
        for s in items {
            let pattern = text_of(s);
            check_pattern(key, pattern).map_err(|reason| Error::Template { line: line(s), reason })?;
            templates.push(Template {
                key,
                pattern: pattern.to_string(),
                has_value_slot: key.has_value_slot(),
            });
        }
        Ok(())
    };
    for (d, items) in &raw.domain {
        let domain = parse_domain(d).map_err(|reason| Error::Template {
            line: items.first().map_or(0, &line),
            reason,
        })?;
        push(TemplateKey::Domain(domain), items)?;
    }
    for (d, slots) in &raw.pair {
        for (s, items) in slots {
            let at = items.first().map_or(0, &line);
            let domain = parse_domain(d).map_err(|reason| Error::Template { line: at, reason })?;
            let slot: SlotLabel = s.parse().map_err(|e: crate::corpus::UnknownLabel| Error::Template {
                line: at,
                reason: e.to_string(),
            })?;
            if !PAIRS.contains(&(domain, slot)) {
                return Err(Error::Template {
                    line: at,
                    reason: format!("unsupported pair {domain}-{slot}"),
                });
            }
            push(TemplateKey::Pair(domain, slot), items)?;
        }
    }
    TemplateBank::from_templates(templates)
}

fn parse_domain(d: &str) -> std::result::Result<DomainLabel, String> {
    match d.parse::<DomainLabel>() {
        Ok(DomainLabel::Unk) => Err("UNK has no templates".into()),
        Ok(d) => Ok(d),
        Err(e) => Err(e.to_string()),
    }
}

pub fn parse_toml(text: &str) -> Result<TemplateBank> {
    if text.trim().is_empty() {
        return Err(Error::NoTemplates);
    }
    let raw: RawBank<toml::Spanned<String>> = toml::from_str(text).map_err(|e| Error::Template {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        reason: e.message().to_string(),
    })?;
    build_bank(raw, |s| s.get_ref(), |s| line_of(text, s.span().start))
}

pub fn parse_json(text: &str) -> Result<TemplateBank> {
    if text.trim().is_empty() {
        return Err(Error::NoTemplates);
    }
    let raw: RawBank<String> = serde_json::from_str(text).map_err(|e| Error::Template {
        line: e.line(),
        reason: e.to_string(),
    })?;
    // Locate a pattern by its encoded form for diagnostics.
    let line = |s: &String| {
        let needle = serde_json::to_string(s).unwrap_or_default();
        text.find(&needle).map_or(0, |o| line_of(text, o))
    };
    build_bank(raw, |s| s.as_str(), line)
}

fn to_raw(bank: &TemplateBank) -> RawBank<String> {
    let mut raw = RawBank {
        domain: BTreeMap::new(),
        pair: BTreeMap::new(),
    };
    for (key, ts) in &bank.groups {
        let patterns = ts.iter().map(|t| t.pattern.clone()).collect();
        match key {
            TemplateKey::Domain(d) => {
                raw.domain.insert(d.to_string(), patterns);
            }
            TemplateKey::Pair(d, s) => {
                raw.pair.entry(d.to_string()).or_default().insert(s.to_string(), patterns);
            }
        }
    }
    raw
}

pub fn to_toml(bank: &TemplateBank) -> Result<String> {
    toml::to_string(&to_raw(bank)).map_err(|e| Error::Config(e.to_string()))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Load a `.toml` or `.json` bank; format follows the extension.
pub fn load_bank(path: impl AsRef<Path>) -> Result<TemplateBank> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if is_json(path) {
        parse_json(&text)
    } else {
        parse_toml(&text)
    }
}

pub fn save_bank(bank: &TemplateBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = if is_json(path) {
        serde_json::to_string_pretty(&to_raw(bank))?
    } else {
        to_toml(bank)?
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDialogue {
    pub dialogue: Dialogue,
    pub prompt: TransitionPrompt,
    pub template: Template,
    pub sentence: String,
}

/// Append a transition sentence to the response at the transition turn.
pub fn augment<R: Rng + ?Sized>(
    d: &Dialogue,
    bank: &TemplateBank,
    kind: PromptKind,
    rng: &mut R,
) -> Result<AugmentedDialogue> {
    let tr = &d.transition;
    let info = match kind {
        PromptKind::DomainOnly => TransitionInfo::domain(tr.domain),
        PromptKind::DomainSlotValue => TransitionInfo::new(tr.domain, tr.slot, tr.value.clone()),
    };
    let prompt = TransitionPrompt::new(kind, info)?;
    let turn = d
        .turns
        .get(tr.turn_index)
        .filter(|t| t.speaker == Speaker::System)
        .ok_or_else(|| Error::Invariant {
            dialogue: d.id.clone(),
            reason: format!("turn {} is not a system turn", tr.turn_index),
        })?;
    let (key, value) = match kind {
        PromptKind::DomainOnly => (TemplateKey::Domain(tr.domain), None),
        PromptKind::DomainSlotValue => (TemplateKey::Pair(tr.domain, tr.slot), tr.value.as_deref()),
    };
    let template = bank.choose(key, rng)?.clone();
    let sentence = template.realize(value)?;
    let mut dialogue = d.clone();
    dialogue.turns[tr.turn_index].text = format!("{} {MARKER} {sentence}", turn.text);
    Ok(AugmentedDialogue {
        dialogue,
        prompt,
        template,
        sentence,
    })
}
