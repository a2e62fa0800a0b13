use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Mode, Speaker, Turn};
use crate::encoder::tokenizer::{END_ID, SYSTEM, TRANSITION, USER};
use crate::encoder::Tokenizer;
use crate::error::{Error, Result};
use crate::templates::{augment, TemplateBank, TemplateKey};

use super::{PromptKind, ResponseMode, TransitionPrompt};

pub const DEFAULT_CONTEXT_TURNS: usize = 3;

/// One generation instance: `[prompt] context [acts] [SYSTEM]` followed by `target [END]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenExample {
    pub dialogue: String,
    pub context: Vec<Turn>,
    pub acts: Option<String>,
    pub prompt: Option<TransitionPrompt>,
    pub target: String,
    pub mode: ResponseMode,
}

impl GenExample {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| {
            Err(Error::Invariant {
                dialogue: self.dialogue.clone(),
                reason: m,
            })
        };
        let markers = self.target.matches(TRANSITION).count();
        if self.prompt.is_some() && markers != 1 {
            return bad(format!("prompted target needs one {TRANSITION}, found {markers}"));
        }
        // Unprompted transition targets exist only for the no-prompt comparison model.
        if markers > 0 && self.mode != ResponseMode::Transition {
            return bad(format!("{TRANSITION} in a {:?} target", self.mode));
        }
        if self.acts.is_some() && self.mode != ResponseMode::Task {
            return bad("acts on a non-task target".into());
        }
        if let Some(p) = &self.prompt {
            p.validate()?;
        }
        Ok(())
    }

    fn prompt_text(&self) -> Result<Option<String>> {
        self.prompt.as_ref().map(TransitionPrompt::build).transpose()
    }

    /// Conditioning text without the trailing `[SYSTEM]`.
    pub fn input_text(&self) -> Result<String> {
        let mut parts: Vec<String> = self.prompt_text()?.into_iter().collect();
        parts.extend(self.context.iter().map(frame_turn));
        parts.extend(self.acts.clone());
        Ok(parts.join(" "))
    }

    /// Token ids of the conditioning input (ending with `[SYSTEM]`) and of the target (ending with `[END]`).
    /// Oldest context turns are dropped first when the pair exceeds `max_len`.
    pub fn encode(&self, tok: &Tokenizer, max_len: usize) -> Result<(Vec<u32>, Vec<u32>)> {
        let mut target = tok.tokenize(&self.target);
        target.push(END_ID);
        let input = encode_input(
            tok,
            self.prompt_text()?.as_deref(),
            &self.context,
            self.acts.as_deref(),
            max_len.saturating_sub(target.len()),
        )?;
        Ok((input, target))
    }
}

pub fn frame_turn(t: &Turn) -> String {
    let tag = match t.speaker {
        Speaker::User => USER,
        Speaker::System => SYSTEM,
    };
    format!("{tag} {}", t.text)
}

/// `[prompt] [USER] ... [SYSTEM] ... [acts] [SYSTEM]`, trimmed from the oldest turn to fit `budget`.
pub fn encode_input(
    tok: &Tokenizer,
    prompt: Option<&str>,
    context: &[Turn],
    acts: Option<&str>,
    budget: usize,
) -> Result<Vec<u32>> {
    let head = prompt.map(|p| tok.tokenize(p)).unwrap_or_default();
    let tail: Vec<u32> = acts
        .map(|a| tok.tokenize(a))
        .unwrap_or_default()
        .into_iter()
        .chain([tok.id(SYSTEM)])
        .collect();
    let mut turns: Vec<Vec<u32>> = context.iter().map(|t| tok.tokenize(&frame_turn(t))).collect();
    let fixed = head.len() + tail.len();
    if fixed > budget {
        return Err(Error::TooLong { len: fixed, max: budget });
    }
    while fixed + turns.iter().map(Vec::len).sum::<usize>() > budget {
        let over = fixed + turns.iter().map(Vec::len).sum::<usize>() - budget;
        if turns.len() > 1 {
            turns.remove(0);
        } else {
            turns[0].drain(..over);
        }
    }
    Ok(head.into_iter().chain(turns.into_iter().flatten()).chain(tail).collect())
}

pub fn context_window(turns: &[Turn], max_turns: usize) -> Vec<Turn> {
    turns[turns.len().saturating_sub(max_turns)..].to_vec()
}

/// Every system turn of every dialogue as a plain chit-chat or task example.
pub fn unified_examples(dialogues: &[Dialogue], max_turns: usize) -> Vec<GenExample> {
    let mut out = Vec::new();
    for d in dialogues {
        for (i, t) in d.turns.iter().enumerate() {
            if t.speaker != Speaker::System {
                continue;
            }
            let mode = match t.mode {
                Mode::Chitchat => ResponseMode::Chitchat,
                Mode::Task => ResponseMode::Task,
            };
            out.push(GenExample {
                dialogue: d.id.clone(),
                context: context_window(&d.turns[..i], max_turns),
                acts: t.acts.clone().filter(|_| mode == ResponseMode::Task),
                prompt: None,
                target: t.text.clone(),
                mode,
            });
        }
    }
    out
}

/// Transition-turn examples: a domain-prompted case for every non-UNK dialogue and a
/// domain-slot-value case when a slot is annotated. `prompted = false` drops the prompt
/// from the input but keeps the same targets.
pub fn transition_examples<R: Rng + ?Sized>(
    dialogues: &[Dialogue],
    bank: &TemplateBank,
    prompted: bool,
    max_turns: usize,
    rng: &mut R,
) -> Result<Vec<GenExample>> {
    let mut out = Vec::new();
    for d in dialogues {
        let tr = &d.transition;
        if tr.domain.is_unk() {
            continue;
        }
        let mut kinds = vec![PromptKind::DomainOnly];
        if !tr.slot.is_unk() && tr.value.is_some() {
            kinds.push(PromptKind::DomainSlotValue);
        }
        for kind in kinds {
            let a = augment(d, bank, kind, rng)?;
            out.push(GenExample {
                dialogue: d.id.clone(),
                context: context_window(&d.turns[..tr.turn_index], max_turns),
                acts: None,
                prompt: prompted.then_some(a.prompt),
                target: a.dialogue.turns[tr.turn_index].text.clone(),
                mode: ResponseMode::Transition,
            });
        }
    }
    Ok(out)
}

/// Realized template sentences after a short context that mentions their topic, for
/// pretraining the base. Each sentence follows a task request of a dialogue with the same
/// transition domain (and, for value templates, that dialogue's value-bearing chit-chat turn),
/// shuffled with an unrelated chit-chat turn. No marker or prompt is used.
pub fn sentence_examples<R: Rng + ?Sized>(
    dialogues: &[Dialogue],
    bank: &TemplateBank,
    per_template: usize,
    rng: &mut R,
) -> Vec<GenExample> {
    let request = |d: &Dialogue| {
        d.turns
            .iter()
            .find(|t| t.mode == Mode::Task && t.speaker == Speaker::User)
            .cloned()
    };
    let mut by_key: BTreeMap<TemplateKey, Vec<&Dialogue>> = BTreeMap::new();
    for d in dialogues.iter().filter(|d| !d.transition.domain.is_unk()) {
        let t = &d.transition;
        by_key.entry(TemplateKey::Domain(t.domain)).or_default().push(d);
        if !t.slot.is_unk() && t.value.is_some() {
            by_key.entry(TemplateKey::Pair(t.domain, t.slot)).or_default().push(d);
        }
    }
    let chat: Vec<&Turn> = dialogues
        .iter()
        .flat_map(|d| d.turns.iter())
        .filter(|t| t.mode == Mode::Chitchat && t.speaker == Speaker::User)
        .collect();
    let mut out = Vec::new();
    for t in bank.iter() {
        let Some(pool) = by_key.get(&t.key) else { continue };
        for _ in 0..per_template {
            let d = *pool.choose(rng).expect("non-empty pool");
            let mut context: Vec<Turn> = request(d).into_iter().collect();
            let value = t.has_value_slot.then_some(d.transition.value.as_deref()).flatten();
            if let Some(vt) = d.transition.value_turn.filter(|_| value.is_some()) {
                context.push(d.turns[vt].clone());
            }
            if let Some(&c) = chat.choose(rng) {
                context.push(c.clone());
            }
            context.shuffle(rng);
            let Ok(target) = t.realize(value) else { continue };
            out.push(GenExample {
                dialogue: d.id.clone(),
                context,
                acts: None,
                prompt: None,
                target,
                mode: ResponseMode::Chitchat,
            });
        }
    }
    out
}

/// Split a response on its first `[TRANSITION]`. Anything after a second marker is dropped.
pub fn split_transition(text: &str) -> (String, Option<String>) {
    let Some((normal, rest)) = text.split_once(TRANSITION) else {
        return (text.trim().to_string(), None);
    };
    let sentence = match rest.split_once(TRANSITION) {
        Some((first, _)) => {
            tracing::warn!(response = text, "discarding text after a second transition marker");
            first
        }
        None => rest,
    };
    (normal.trim().to_string(), Some(sentence.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::sample_dialogue;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sentence_examples_carry_topical_context() {
        let mut spec = crate::corpus::SynthSpec::default();
        spec.dialogues = 40;
        let ds = crate::corpus::synth_generate(&spec, 2).unwrap();
        let bank = TemplateBank::default();
        let ex = sentence_examples(&ds, &bank, 1, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(!ex.is_empty() && ex.len() <= bank.len());
        for e in &ex {
            e.validate().unwrap();
            assert_eq!(e.mode, ResponseMode::Chitchat);
            assert!(e.prompt.is_none() && !e.target.contains(TRANSITION));
            let d = ds.iter().find(|d| d.id == e.dialogue).unwrap();
            assert!(e.context.iter().any(|t| t.mode == Mode::Task), "{e:?}");
            if let Some(v) = d.transition.value.as_deref() {
                if e.context.len() == 3 {
                    assert!(e.target.contains(v), "{} / {v}", e.target);
                }
            }
        }
        let again = sentence_examples(&ds, &bank, 1, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(ex, again);
    }

    #[test]
    fn unified_examples_follow_modes() {
        let d = sample_dialogue();
        let ex = unified_examples(std::slice::from_ref(&d), 3);
        assert_eq!(ex.len(), 3);
        assert_eq!(ex[0].mode, ResponseMode::Chitchat);
        assert!(ex[0].acts.is_none());
        assert_eq!(ex[2].mode, ResponseMode::Task);
        assert_eq!(ex[2].acts.as_deref(), Some("train{request(day=?)}"));
        assert_eq!(ex[2].context.len(), 3);
        for e in &ex {
            e.validate().unwrap();
        }
        let text = ex[2].input_text().unwrap();
        assert!(text.starts_with("[USER] Thank you."), "{text}");
        assert!(text.ends_with("train{request(day=?)}"), "{text}");
    }

    #[test]
    fn task_input_ends_with_acts_then_system() {
        let d = sample_dialogue();
        let all: Vec<&str> = d.turns.iter().map(|t| t.text.as_str()).chain(["train{request(day=?)}"]).collect();
        let tok = Tokenizer::build(all, 1);
        let ex = &unified_examples(std::slice::from_ref(&d), 3)[2];
        let (input, target) = ex.encode(&tok, 256).unwrap();
        assert_eq!(*input.last().unwrap(), tok.id(SYSTEM));
        let acts = tok.tokenize("train{request(day=?)}");
        assert_eq!(&input[input.len() - 1 - acts.len()..input.len() - 1], &acts[..]);
        assert_eq!(*target.last().unwrap(), END_ID);
    }

    #[test]
    fn transition_examples_two_cases() {
        let d = sample_dialogue();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ex = transition_examples(std::slice::from_ref(&d), &TemplateBank::default(), true, 3, &mut rng).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].prompt.as_ref().unwrap().build().unwrap(), "[TRANSITION] ( domain = train )");
        assert!(ex[1].input_text().unwrap().starts_with(
            "[TRANSITION] ( domain = train, slot = destination, value = London Kings Cross ) [USER] I will be"
        ));
        for e in &ex {
            e.validate().unwrap();
            assert!(e.target.starts_with("I see. [TRANSITION] "));
        }
        let unprompted = transition_examples(std::slice::from_ref(&d), &TemplateBank::default(), false, 3, &mut rng).unwrap();
        assert!(unprompted.iter().all(|e| e.prompt.is_none() && e.validate().is_ok()));
    }

    #[test]
    fn truncation_drops_oldest_turns() {
        let d = sample_dialogue();
        let tok = Tokenizer::build(d.turns.iter().map(|t| t.text.as_str()), 1);
        let full = encode_input(&tok, Some("[TRANSITION] ( domain = train )"), &d.turns[..3], None, 256).unwrap();
        let cut = encode_input(&tok, Some("[TRANSITION] ( domain = train )"), &d.turns[..3], None, full.len() - 5).unwrap();
        assert!(cut.len() <= full.len() - 5);
        assert_eq!(&cut[..4], &full[..4]);
        assert_eq!(cut.last(), full.last());
    }

    #[test]
    fn split_on_first_marker() {
        assert_eq!(
            split_transition("I see. [TRANSITION] Need a train? [TRANSITION] extra"),
            ("I see.".to_string(), Some("Need a train?".to_string()))
        );
        assert_eq!(split_transition("Just chatting."), ("Just chatting.".to_string(), None));
    }
}
