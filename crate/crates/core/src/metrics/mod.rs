//! Extractor and generation metrics: semantic accuracy, slot-filling F1,
//! classification scores, Distinct-n, BLEU and transition/d/d-v accuracy.

mod bleu;
mod span;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, DomainLabel, SlotLabel};
use crate::encoder::tokenizer::{split_words, TRANSITION};
use crate::error::{Error, Result};
use crate::tsg::{PromptKind, ResponseMode, TransitionPrompt};

pub use bleu::{bleu, distinct_n};
pub use span::{spans, Span};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieEvalRecord {
    pub gold_domain: DomainLabel,
    pub pred_domain: DomainLabel,
    pub gold_slot: SlotLabel,
    pub pred_slot: SlotLabel,
    pub gold_tags: Vec<usize>,
    pub pred_tags: Vec<usize>,
}

impl TieEvalRecord {
    fn check(&self) -> Result<()> {
        if self.gold_tags.len() != self.pred_tags.len() {
            return Err(Error::LengthMismatch(format!(
                "gold has {} tags, prediction {}",
                self.gold_tags.len(),
                self.pred_tags.len()
            )));
        }
        Ok(())
    }

    pub fn tags_match(&self) -> bool {
        self.gold_tags == self.pred_tags
    }
}

fn ratio<T>(records: &[T], what: &'static str, ok: impl Fn(&T) -> bool) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty(what));
    }
    Ok(records.iter().filter(|r| ok(r)).count() as f64 / records.len() as f64)
}

/// Domain, slot and the whole tag sequence (including `O`) all correct.
pub fn semantic_acc(records: &[TieEvalRecord]) -> Result<f64> {
    records.iter().try_for_each(TieEvalRecord::check)?;
    ratio(records, "record set", |r| {
        r.gold_domain == r.pred_domain && r.gold_slot == r.pred_slot && r.tags_match()
    })
}

pub fn sen_sf_acc(records: &[TieEvalRecord]) -> Result<f64> {
    records.iter().try_for_each(TieEvalRecord::check)?;
    ratio(records, "record set", TieEvalRecord::tags_match)
}

/// Span-level micro F1 with exact type and offset matching; 1.0 when neither side has spans.
pub fn sf_f1(records: &[TieEvalRecord]) -> Result<f64> {
    records.iter().try_for_each(TieEvalRecord::check)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for r in records {
        let gold = spans(&r.gold_tags);
        let pred = spans(&r.pred_tags);
        let hits = pred.iter().filter(|s| gold.contains(s)).count();
        tp += hits;
        fp += pred.len() - hits;
        fn_ += gold.len() - hits;
    }
    if tp + fp + fn_ == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub accuracy: f64,
    pub weighted_f1: f64,
}

/// Accuracy and support-weighted F1 over `classes`; undefined precision counts as 0.
pub fn classification_scores<T: PartialEq + Copy>(golds: &[T], preds: &[T], classes: &[T]) -> Result<ClassScores> {
    if golds.len() != preds.len() {
        return Err(Error::LengthMismatch(format!("{} golds, {} preds", golds.len(), preds.len())));
    }
    if golds.is_empty() {
        return Err(Error::Empty("label list"));
    }
    let n = golds.len() as f64;
    let accuracy = golds.iter().zip(preds).filter(|(g, p)| g == p).count() as f64 / n;
    let mut weighted_f1 = 0.0;
    for c in classes {
        let tp = golds.iter().zip(preds).filter(|(g, p)| *g == c && *p == c).count() as f64;
        let support = golds.iter().filter(|g| *g == c).count() as f64;
        let predicted = preds.iter().filter(|p| *p == c).count() as f64;
        if support == 0.0 || tp == 0.0 {
            continue;
        }
        let precision = tp / predicted;
        let recall = tp / support;
        weighted_f1 += support / n * 2.0 * precision * recall / (precision + recall);
    }
    Ok(ClassScores { accuracy, weighted_f1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenEvalRecord {
    pub generated: String,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<TransitionPrompt>,
    pub mode: ResponseMode,
}

/// Text after the `[TRANSITION]` marker; `None` unless exactly one marker is present.
pub fn transition_sentence(text: &str) -> Option<&str> {
    if text.matches(TRANSITION).count() != 1 {
        return None;
    }
    text.find(TRANSITION).map(|i| text[i + TRANSITION.len()..].trim())
}

/// Whole-word, case-insensitive match of the domain name or its plural.
pub fn contains_domain_word(text: &str, domain: DomainLabel) -> bool {
    if domain.is_unk() {
        return false;
    }
    let word = domain.as_str();
    let plural = format!("{word}s");
    split_words(text).iter().any(|w| w == word || *w == plural)
}

/// Case- and whitespace-normalised containment on word boundaries.
pub fn contains_value(text: &str, value: &str) -> bool {
    let hay = format!(" {} ", normalize(&split_words(text).join(" ")));
    let needle = normalize(&split_words(value).join(" "));
    !needle.is_empty() && hay.contains(&format!(" {needle} "))
}

pub fn transition_accuracy(records: &[GenEvalRecord]) -> Result<f64> {
    ratio(records, "record set", |r| r.generated.matches(TRANSITION).count() == 1)
}

fn d_ok(r: &GenEvalRecord) -> bool {
    match (&r.prompt, transition_sentence(&r.generated)) {
        (Some(p), Some(s)) => contains_domain_word(s, p.info.domain),
        _ => false,
    }
}

pub fn d_accuracy(records: &[GenEvalRecord]) -> Result<f64> {
    ratio(records, "record set", d_ok)
}

pub fn dv_accuracy(records: &[GenEvalRecord]) -> Result<f64> {
    ratio(records, "record set", |r| {
        d_ok(r)
            && match (&r.prompt, transition_sentence(&r.generated)) {
                (Some(p), Some(s)) if p.kind == PromptKind::DomainSlotValue => {
                    p.info.value.as_deref().is_some_and(|v| contains_value(s, v))
                }
                _ => false,
            }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tag;
    use crate::tie::TransitionInfo;

    fn rec(gold: &[Tag], pred: &[Tag]) -> TieEvalRecord {
        TieEvalRecord {
            gold_domain: DomainLabel::Restaurant,
            pred_domain: DomainLabel::Restaurant,
            gold_slot: SlotLabel::Food,
            pred_slot: SlotLabel::Food,
            gold_tags: gold.iter().map(|t| t.index()).collect(),
            pred_tags: pred.iter().map(|t| t.index()).collect(),
        }
    }

    #[test]
    fn perfect_records() {
        let g = [Tag::Cls, Tag::Outside, Tag::Begin(3), Tag::Inside(3), Tag::Sep];
        let r = vec![rec(&g, &g)];
        assert_eq!(semantic_acc(&r).unwrap(), 1.0);
        assert_eq!(sen_sf_acc(&r).unwrap(), 1.0);
        assert_eq!(sf_f1(&r).unwrap(), 1.0);
    }

    #[test]
    fn one_wrong_outside_tag() {
        let g = [Tag::Cls, Tag::Outside, Tag::Outside, Tag::Sep];
        let p = [Tag::Cls, Tag::Outside, Tag::Sep, Tag::Sep];
        assert_eq!(semantic_acc(&[rec(&g, &p)]).unwrap(), 0.0);
    }

    #[test]
    fn shifted_span_is_fp_and_fn() {
        let g = [Tag::Outside, Tag::Begin(0), Tag::Outside, Tag::Begin(1)];
        let p = [Tag::Outside, Tag::Outside, Tag::Begin(0), Tag::Begin(1)];
        // one hit, one FP, one FN
        assert!((sf_f1(&[rec(&g, &p)]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(semantic_acc(&[]), Err(Error::Empty(_))));
        let r = rec(&[Tag::Outside], &[Tag::Outside, Tag::Outside]);
        assert!(matches!(sf_f1(&[r]), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn weighted_f1_toy() {
        let s = classification_scores(&['A', 'A', 'B'], &['A', 'B', 'B'], &['A', 'B']).unwrap();
        assert!((s.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.weighted_f1 - 2.0 / 3.0).abs() < 1e-12);
        let p = classification_scores(&[1, 2], &[1, 2], &[1, 2, 3]).unwrap();
        assert_eq!((p.accuracy, p.weighted_f1), (1.0, 1.0));
    }

    fn gen(text: &str, prompt: Option<TransitionPrompt>) -> GenEvalRecord {
        GenEvalRecord {
            generated: text.into(),
            reference: String::new(),
            prompt,
            mode: ResponseMode::Transition,
        }
    }

    #[test]
    fn transition_metrics() {
        let train = TransitionPrompt::richest(&TransitionInfo::domain(DomainLabel::Train));
        let r = gen("I see. [TRANSITION] I can help with the train.", train.clone());
        assert_eq!(transition_accuracy(std::slice::from_ref(&r)).unwrap(), 1.0);
        assert_eq!(d_accuracy(&[r]).unwrap(), 1.0);
        let miss = gen("I see.", train);
        assert_eq!(transition_accuracy(std::slice::from_ref(&miss)).unwrap(), 0.0);
        assert_eq!(d_accuracy(&[miss]).unwrap(), 0.0);

        let info = TransitionInfo::new(DomainLabel::Train, SlotLabel::Destination, Some("London Kings Cross".into()));
        let fig1 = gen(
            "I see. [TRANSITION] If you want, I can look for a train to London Kings Cross for you.",
            TransitionPrompt::richest(&info),
        );
        assert_eq!(dv_accuracy(&[fig1]).unwrap(), 1.0);
    }

    #[test]
    fn domain_word_boundaries() {
        assert!(contains_domain_word("any taxis around?", DomainLabel::Taxi));
        assert!(contains_domain_word("Trains run late", DomainLabel::Train));
        assert!(!contains_domain_word("i was training hard", DomainLabel::Train));
        assert!(!contains_domain_word("the theatres are open", DomainLabel::Attraction));
    }
}
