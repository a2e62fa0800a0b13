use crate::encoder::tokenizer::{split_words, CLS_ID, PAD_ID, SEP_ID};
use crate::encoder::Tokenizer;
use crate::error::{Error, Result};

use super::{pair_index, Dialogue, DomainLabel, SlotLabel, Tag, Turn};

pub const DEFAULT_MAX_TOKENS: usize = 256;

/// One extractor training/eval instance: `[CLS] turn [SEP] turn [SEP] ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub tokens: Vec<u32>,
    /// Tag indices aligned with `tokens`, special positions included.
    pub tags: Vec<usize>,
    pub mask: Vec<bool>,
    pub domain: DomainLabel,
    pub slot: SlotLabel,
}

impl TrainingExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Extractor input over an arbitrary chit-chat history, with all word positions tagged `O`.
pub(crate) fn frame_context(
    turns: &[Turn],
    tokenizer: &Tokenizer,
    max_tokens: usize,
) -> (Vec<u32>, Vec<usize>, Vec<(usize, usize)>) {
    let mut pieces: Vec<Vec<u32>> = turns.iter().map(|t| tokenizer.tokenize(&t.text)).collect();
    let mut first = 0;
    let total = |ps: &[Vec<u32>]| 1 + ps.iter().map(|p| p.len() + 1).sum::<usize>();
    while total(&pieces[first..]) > max_tokens && first + 1 < pieces.len() {
        first += 1;
    }
    if total(&pieces[first..]) > max_tokens {
        let keep = max_tokens.saturating_sub(2);
        let p = &mut pieces[first];
        let cut = p.len() - keep;
        p.drain(..cut);
    }
    let mut tokens = vec![CLS_ID];
    let mut tags = vec![Tag::Cls.index()];
    let mut spans = vec![(0, 0); turns.len()];
    for (i, p) in pieces.iter().enumerate().skip(first) {
        let start = tokens.len();
        tokens.extend_from_slice(p);
        tags.extend(std::iter::repeat_n(Tag::Outside.index(), p.len()));
        spans[i] = (start, tokens.len());
        tokens.push(SEP_ID);
        tags.push(Tag::Sep.index());
    }
    (tokens, tags, spans)
}

/// Build the tagged extractor example for a dialogue's transition turn.
///
/// The context is every turn before `transition.turn_index`; the annotated value
/// is matched on word pieces (case-insensitive), preferring the last occurrence.
pub fn derive_iob(d: &Dialogue, tokenizer: &Tokenizer, max_tokens: usize) -> Result<TrainingExample> {
    let tr = &d.transition;
    let context = &d.turns[..tr.turn_index.min(d.turns.len())];
    let (tokens, mut tags, spans) = frame_context(context, tokenizer, max_tokens);

    if !tr.domain.is_unk() && !tr.slot.is_unk() {
        let pair = pair_index(tr.domain, tr.slot).ok_or_else(|| Error::Invariant {
            dialogue: d.id.clone(),
            reason: format!("unsupported pair {}-{}", tr.domain, tr.slot),
        })?;
        let value = tr.value.as_deref().unwrap_or_default();
        let needle = split_words(value);
        let turn_indices: Vec<usize> = match tr.value_turn {
            Some(v) => vec![v],
            None => (0..context.len()).collect(),
        };
        let mut found = None;
        for &ti in &turn_indices {
            let Some(turn) = context.get(ti) else { continue };
            let (start, end) = spans[ti];
            let words = split_words(&turn.text);
            // Truncation may have dropped the head of the turn.
            let offset = words.len() - (end - start);
            for w in 0..words.len().saturating_sub(needle.len().saturating_sub(1)) {
                if !needle.is_empty() && words[w..w + needle.len()] == needle[..] && w >= offset {
                    found = Some(start + w - offset);
                }
            }
        }
        let Some(pos) = found else {
            let diagnostics = turn_indices
                .iter()
                .filter_map(|&ti| context.get(ti).map(|t| (ti, split_words(&t.text))))
                .map(|(ti, w)| format!("turn {ti}: {w:?} (looking for {needle:?})"))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::ValueNotFound {
                value: value.to_string(),
                diagnostics,
            });
        };
        tags[pos] = Tag::Begin(pair).index();
        for t in &mut tags[pos + 1..pos + needle.len()] {
            *t = Tag::Inside(pair).index();
        }
    }

    let mask = vec![true; tokens.len()];
    Ok(TrainingExample {
        tokens,
        tags,
        mask,
        domain: tr.domain,
        slot: tr.slot,
    })
}

/// Examples padded to the longest one.
#[derive(Debug, Clone)]
pub struct Batch {
    pub examples: Vec<TrainingExample>,
    pub max_len: usize,
}

pub fn collate(examples: &[TrainingExample]) -> Batch {
    let max_len = examples.iter().map(|e| e.len()).max().unwrap_or(0);
    let examples = examples
        .iter()
        .map(|e| {
            let mut e = e.clone();
            let pad = max_len - e.tokens.len();
            e.tokens.extend(std::iter::repeat_n(PAD_ID, pad));
            e.tags.extend(std::iter::repeat_n(Tag::Pad.index(), pad));
            e.mask.extend(std::iter::repeat_n(false, pad));
            e
        })
        .collect();
    Batch { examples, max_len }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{sample_dialogue, Mode, Split, TransitionAnnotation};

    fn one_turn(text: &str, value: Option<&str>, domain: DomainLabel, slot: SlotLabel) -> Dialogue {
        Dialogue {
            id: "t".into(),
            split: Split::Train,
            turns: vec![
                Turn::user(text, Mode::Chitchat),
                Turn::system("ok", Mode::Chitchat, None),
                Turn::user("book it", Mode::Task),
            ],
            transition: TransitionAnnotation {
                domain,
                slot,
                value: value.map(String::from),
                turn_index: 1,
                value_turn: value.map(|_| 0),
            },
        }
    }

    fn labels(ex: &TrainingExample) -> Vec<String> {
        ex.tags.iter().map(|&t| Tag::from_index(t).unwrap().label()).collect()
    }

    #[test]
    fn korean_restaurant_tags() {
        let d = one_turn(
            "I saw some korean restaurant around",
            Some("korean restaurant"),
            DomainLabel::Restaurant,
            SlotLabel::Food,
        );
        let tok = Tokenizer::build(["i saw some korean restaurant around"], 1);
        let ex = derive_iob(&d, &tok, DEFAULT_MAX_TOKENS).unwrap();
        assert_eq!(
            labels(&ex),
            ["[CLS]", "O", "O", "O", "B-restaurant-food", "I-restaurant-food", "O", "[SEP]"]
        );
        assert_eq!(ex.tokens[0], CLS_ID);
    }

    #[test]
    fn unk_dialogue_all_outside() {
        let d = one_turn("nice weather today", None, DomainLabel::Unk, SlotLabel::Unk);
        let tok = Tokenizer::build(["nice weather today"], 1);
        let ex = derive_iob(&d, &tok, DEFAULT_MAX_TOKENS).unwrap();
        assert!(labels(&ex)[1..4].iter().all(|l| l == "O"));
    }

    #[test]
    fn three_token_value() {
        let d = sample_dialogue();
        let tok = Tokenizer::build(d.turns.iter().map(|t| t.text.as_str()), 1);
        let ex = derive_iob(&d, &tok, DEFAULT_MAX_TOKENS).unwrap();
        let l = labels(&ex);
        let b = l.iter().position(|x| x == "B-train-destination").unwrap();
        assert_eq!(l[b + 1], "I-train-destination");
        assert_eq!(l[b + 2], "I-train-destination");
        assert_eq!(l[b + 3], "O");
        assert_eq!(tok.decode(&ex.tokens[b..b + 3]), "london kings cross");
        // two turns + transition-turn context = 3 turns, 3 separators
        assert_eq!(ex.tokens.iter().filter(|&&t| t == SEP_ID).count(), 3);
    }

    #[test]
    fn last_occurrence_wins() {
        let d = one_turn("ely or maybe ely", Some("ely"), DomainLabel::Train, SlotLabel::Destination);
        let tok = Tokenizer::build(["ely or maybe"], 1);
        let ex = derive_iob(&d, &tok, DEFAULT_MAX_TOKENS).unwrap();
        assert_eq!(labels(&ex)[4], "B-train-destination");
        assert_eq!(labels(&ex)[1], "O");
    }

    #[test]
    fn value_not_matchable_reports_span() {
        let d = one_turn("going to london kings", Some("london kings cross"), DomainLabel::Train, SlotLabel::Destination);
        let tok = Tokenizer::build(["going to london kings"], 1);
        match derive_iob(&d, &tok, DEFAULT_MAX_TOKENS) {
            Err(Error::ValueNotFound { diagnostics, .. }) => assert!(diagnostics.contains("turn 0")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_keeps_cls_and_recent_turns() {
        let d = sample_dialogue();
        let tok = Tokenizer::build(d.turns.iter().map(|t| t.text.as_str()), 1);
        let full = derive_iob(&d, &tok, DEFAULT_MAX_TOKENS).unwrap();
        let cap = full.len() - 3;
        let (tokens, _, _) = frame_context(&d.turns[..3], &tok, cap);
        assert!(tokens.len() <= cap);
        assert_eq!(tokens[0], CLS_ID);
    }

    #[test]
    fn collate_pads() {
        let d = sample_dialogue();
        let tok = Tokenizer::build(d.turns.iter().map(|t| t.text.as_str()), 1);
        let a = derive_iob(&d, &tok, DEFAULT_MAX_TOKENS).unwrap();
        let short = one_turn("hi", None, DomainLabel::Unk, SlotLabel::Unk);
        let b = derive_iob(&short, &tok, DEFAULT_MAX_TOKENS).unwrap();
        let batch = collate(&[a.clone(), b]);
        for e in &batch.examples {
            assert_eq!(e.tokens.len(), batch.max_len);
            assert_eq!(e.tags.len(), batch.max_len);
            assert_eq!(e.mask.len(), batch.max_len);
            for i in 0..batch.max_len {
                if !e.mask[i] {
                    assert_eq!(e.tags[i], Tag::Pad.index());
                    assert_eq!(e.tokens[i], PAD_ID);
                }
            }
        }
    }
}
