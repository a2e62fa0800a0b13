//! Dialogue data model, FusedChat-style ingestion, IOB derivation and the
//! synthetic corpus generator.

pub(crate) mod iob;
mod labels;
mod synth;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use iob::{collate, derive_iob, Batch, TrainingExample, DEFAULT_MAX_TOKENS};
pub use labels::{pair_index, DomainLabel, LabelDictionary, SlotLabel, Tag, UnknownLabel, PAIRS};
pub use synth::{synth_generate, PairVocabulary, SynthSpec, TaskExchange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Chitchat,
    Task,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acts: Option<String>,
}

impl Turn {
    pub fn user(text: impl Into<String>, mode: Mode) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
            mode,
            acts: None,
        }
    }

    pub fn system(text: impl Into<String>, mode: Mode, acts: Option<String>) -> Self {
        Self {
            speaker: Speaker::System,
            text: text.into(),
            mode,
            acts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionAnnotation {
    pub domain: DomainLabel,
    pub slot: SlotLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    pub turn_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_turn: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub split: Split,
    pub turns: Vec<Turn>,
    pub transition: TransitionAnnotation,
}

/// Lowercase and collapse whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl Dialogue {
    /// Number of turns before the first task-mode turn.
    pub fn chitchat_len(&self) -> usize {
        self.turns
            .iter()
            .position(|t| t.mode == Mode::Task)
            .unwrap_or(self.turns.len())
    }

    pub fn chitchat_prefix(&self) -> &[Turn] {
        &self.turns[..self.chitchat_len()]
    }

    /// Check every structural and annotation invariant.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::Invariant {
                dialogue: self.id.clone(),
                reason,
            })
        };
        if self.turns.is_empty() {
            return fail("no turns".into());
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.text.trim().is_empty() {
                return fail(format!("turn {i} has empty text"));
            }
            if t.acts.is_some() && t.mode != Mode::Task {
                return fail(format!("turn {i} carries acts outside task mode"));
            }
            let expected = if i % 2 == 0 { Speaker::User } else { Speaker::System };
            if t.speaker != expected {
                return fail(format!("turn {i} breaks user/system alternation"));
            }
        }
        let prefix = self.chitchat_len();
        if prefix == 0 {
            return fail("dialogue has no chit-chat prefix".into());
        }
        if let Some(i) = self.turns[prefix..].iter().position(|t| t.mode != Mode::Task) {
            return fail(format!("chit-chat turn {} after task suffix began", prefix + i));
        }
        let tr = &self.transition;
        if tr.turn_index + 1 != prefix || self.turns[tr.turn_index].speaker != Speaker::System {
            return fail(format!(
                "turn_index {} is not the last system turn of the chit-chat prefix",
                tr.turn_index
            ));
        }
        if tr.domain.is_unk() {
            if !tr.slot.is_unk() || tr.value.is_some() {
                return fail("UNK domain must carry UNK slot and no value".into());
            }
            return Ok(());
        }
        if tr.slot.is_unk() {
            if tr.value.is_some() {
                return fail("value given without a slot".into());
            }
            return Ok(());
        }
        if pair_index(tr.domain, tr.slot).is_none() {
            return fail(format!("unsupported domain-slot pair {}-{}", tr.domain, tr.slot));
        }
        let value = match tr.value.as_deref().map(normalize) {
            Some(v) if !v.is_empty() => v,
            _ => return fail("slot given without a non-empty value".into()),
        };
        let Some(vt) = tr.value_turn else {
            return fail("value_turn missing".into());
        };
        if vt >= tr.turn_index || self.turns[vt].speaker != Speaker::User {
            return fail(format!("value_turn {vt} is not a user turn of the chit-chat prefix"));
        }
        if !normalize(&self.turns[vt].text).contains(&value) {
            return fail(format!("value {value:?} does not appear in turn {vt}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    FusedchatJson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub dialogue: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub dialogues: Vec<Dialogue>,
    pub rejected: Vec<Rejection>,
}

impl IngestReport {
    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut m = BTreeMap::new();
        for s in [Split::Train, Split::Valid, Split::Test] {
            m.insert(s, 0);
        }
        for d in &self.dialogues {
            *m.entry(d.split).or_default() += 1;
        }
        m
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransition {
    domain: String,
    slot: String,
    #[serde(default)]
    value: Option<String>,
    turn_index: usize,
    #[serde(default)]
    value_turn: Option<usize>,
}

#[derive(Deserialize)]
struct RawDialogue {
    id: String,
    split: Split,
    turns: Vec<Turn>,
    transition: RawTransition,
}

#[derive(Serialize)]
struct CorpusFileRef<'a> {
    dialogues: &'a [Dialogue],
}

/// Parse a FusedChat-style document. Schema violations are errors; dialogues that
/// parse but break an invariant (including out-of-inventory domains or slots) are
/// rejected with a reason and a warning.
pub fn ingest_str(text: &str) -> Result<IngestReport> {
    let root: serde_json::Value = serde_json::from_str(text)?;
    let list = root
        .get("dialogues")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::Schema {
            dialogue: "<root>".into(),
            field: "dialogues".into(),
            reason: "expected an array under `dialogues`".into(),
        })?;
    let mut report = IngestReport::default();
    for (i, value) in list.iter().enumerate() {
        let id = value
            .get("id")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("#{i}"));
        let raw: RawDialogue =
            serde_json::from_value(value.clone()).map_err(|e| Error::Schema {
                dialogue: id.clone(),
                field: schema_field(&e.to_string()),
                reason: e.to_string(),
            })?;
        let mut reject = |reason: String| {
            tracing::warn!(dialogue = %id, %reason, "rejected dialogue");
            report.rejected.push(Rejection {
                dialogue: id.clone(),
                reason,
            });
        };
        let domain = match raw.transition.domain.parse::<DomainLabel>() {
            Ok(d) => d,
            Err(e) => {
                reject(format!("transition.domain: {e}"));
                continue;
            }
        };
        let slot = match raw.transition.slot.parse::<SlotLabel>() {
            Ok(s) => s,
            Err(e) => {
                reject(format!("transition.slot: {e}"));
                continue;
            }
        };
        let dialogue = Dialogue {
            id: raw.id,
            split: raw.split,
            turns: raw.turns,
            transition: TransitionAnnotation {
                domain,
                slot,
                value: raw.transition.value,
                turn_index: raw.transition.turn_index,
                value_turn: raw.transition.value_turn,
            },
        };
        match dialogue.validate() {
            Ok(()) => report.dialogues.push(dialogue),
            Err(Error::Invariant { reason, .. }) => reject(reason),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

fn schema_field(msg: &str) -> String {
    // serde messages name the field in backticks, e.g. "missing field `speaker`"
    msg.split('`').nth(1).unwrap_or("<unknown>").to_string()
}

pub fn ingest(path: impl AsRef<Path>, format: CorpusFormat) -> Result<IngestReport> {
    let path = path.as_ref();
    match format {
        CorpusFormat::FusedchatJson => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let report = ingest_str(&text)?;
            let counts = report.split_counts();
            tracing::info!(
                path = %path.display(),
                train = counts[&Split::Train],
                valid = counts[&Split::Valid],
                test = counts[&Split::Test],
                rejected = report.rejected.len(),
                "ingested corpus"
            );
            Ok(report)
        }
    }
}

pub fn to_json(dialogues: &[Dialogue]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&CorpusFileRef { dialogues })?)
}

pub fn save(dialogues: &[Dialogue], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(dialogues)?).map_err(|e| Error::io(path, e))
}

pub fn by_split(dialogues: &[Dialogue], split: Split) -> Vec<Dialogue> {
    dialogues.iter().filter(|d| d.split == split).cloned().collect()
}

/// A reference dialogue: chit-chat about a new school near London Kings Cross,
/// followed by a train booking.
pub fn sample_dialogue() -> Dialogue {
    Dialogue {
        id: "fig1".into(),
        split: Split::Test,
        turns: vec![
            Turn::user(
                "I will be enrolling in a new school at London Kings Cross next week. I'm so nervous.",
                Mode::Chitchat,
            ),
            Turn::system("I hope you have fun at your new school.", Mode::Chitchat, None),
            Turn::user(
                "Thank you. My family and I will be visiting my school this weekend to see how it's like.",
                Mode::Chitchat,
            ),
            Turn::system("I see.", Mode::Chitchat, None),
            Turn::user(
                "I'm trying to find a train that goes from Cambridge to my school. Can you help me book a ticket?",
                Mode::Task,
            ),
            Turn::system(
                "I can help with that. Can you tell me what day you will be travelling?",
                Mode::Task,
                Some("train{request(day=?)}".into()),
            ),
        ],
        transition: TransitionAnnotation {
            domain: DomainLabel::Train,
            slot: SlotLabel::Destination,
            value: Some("London Kings Cross".into()),
            turn_index: 3,
            value_turn: Some(0),
        },
    }
}
