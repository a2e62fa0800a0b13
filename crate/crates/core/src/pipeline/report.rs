use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{derive_iob, Dialogue};
use crate::error::{Error, Result};
use crate::metrics::{d_accuracy, dv_accuracy, transition_accuracy, transition_sentence, GenEvalRecord};
use crate::tie::{evaluate_tie, TieModel, TieOutput, TransitionInfo};
use crate::tsg::eval::transition_response;
use crate::tsg::{
    case_seed, evaluate_generator, DiversityScores, GenEvalOptions, Generator, PromptKind, ResponseMode,
    TransitionPrompt, TransitionScores,
};

use super::gated_prompt;

const NOT_AVAILABLE: &str = "N/A";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    Gold,
    #[default]
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchOptions {
    pub seed: u64,
    pub prompt_source: PromptSource,
    /// Also score chit-chat diversity and task BLEU on every system turn.
    pub normal_turns: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            prompt_source: PromptSource::Tie,
            normal_turns: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TieSection {
    pub examples: usize,
    pub domain_accuracy: f64,
    pub domain_f1: f64,
    pub slot_accuracy: f64,
    pub slot_f1: f64,
    pub semantic_acc: f64,
    pub sen_sf_acc: f64,
    pub sf_f1: f64,
}

/// One transition-turn generation, scored against the gold annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCase {
    /// Prompt string fed to the generator, byte-for-byte.
    pub prompt: String,
    pub prompt_kind: PromptKind,
    pub input: String,
    pub generated: String,
    pub normal: String,
    pub sentence: Option<String>,
    pub has_transition: bool,
    pub domain_hit: bool,
    /// `None` when the gold annotation has no value.
    pub value_hit: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTrace {
    pub dialogue: String,
    pub gold: TransitionInfo,
    pub tie: Option<TieOutput>,
    /// `None` when the prompt source yields UNK: no transition is generated.
    pub case: Option<TransitionCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub prompt_source: PromptSource,
    pub seed: u64,
    pub dialogues: usize,
    pub skipped: Vec<String>,
    pub tie: Option<TieSection>,
    pub chitchat: Option<DiversityScores>,
    pub task_bleu: Option<f64>,
    /// Transition and domain-keyword accuracy over every gold non-UNK dialogue.
    pub domain_ts: Option<TransitionScores>,
    /// Transition and domain-value accuracy over gold dialogues carrying a value.
    pub dsv_ts: Option<TransitionScores>,
    pub meteor: String,
    pub bertscore: String,
    pub traces: Vec<DialogueTrace>,
}

impl EvaluationReport {
    pub fn empty(opts: BatchOptions) -> Self {
        Self {
            prompt_source: opts.prompt_source,
            seed: opts.seed,
            dialogues: 0,
            skipped: Vec::new(),
            tie: None,
            chitchat: None,
            task_bleu: None,
            domain_ts: None,
            dsv_ts: None,
            meteor: NOT_AVAILABLE.into(),
            bertscore: NOT_AVAILABLE.into(),
            traces: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Recompute the transition scores from the traces.
    pub fn rescore(&mut self) {
        let (d, dv) = score_traces(&self.traces);
        self.domain_ts = d;
        self.dsv_ts = dv;
    }

    /// Plain-text tables: extractor scores, normal-turn scores, transition scores.
    pub fn table(&self) -> String {
        let pct = |x: f64| format!("{:6.2}", 100.0 * x);
        let mut s = String::new();
        let _ = writeln!(s, "prompt source: {:?}   dialogues: {}   skipped: {}", self.prompt_source, self.dialogues, self.skipped.len());
        if let Some(t) = &self.tie {
            let _ = writeln!(s, "\nTIE ({} examples)", t.examples);
            let _ = writeln!(s, "  {:<16}{:>8}{:>8}", "", "acc", "F1");
            let _ = writeln!(s, "  {:<16}{:>8}{:>8}", "domain", pct(t.domain_accuracy), pct(t.domain_f1));
            let _ = writeln!(s, "  {:<16}{:>8}{:>8}", "slot", pct(t.slot_accuracy), pct(t.slot_f1));
            let _ = writeln!(s, "  {:<16}{:>8}", "semantic acc", pct(t.semantic_acc));
            let _ = writeln!(s, "  {:<16}{:>8}", "sen sf acc", pct(t.sen_sf_acc));
            let _ = writeln!(s, "  {:<16}{:>8}", "sf F1", pct(t.sf_f1));
        }
        if self.chitchat.is_some() || self.task_bleu.is_some() {
            let _ = writeln!(s, "\nNormal turns");
            let _ = writeln!(s, "  {:<10}{:>10}{:>10}{:>8}{:>8}{:>11}", "", "distinct1", "distinct2", "BLEU", "Meteor", "BERTScore");
            if let Some(c) = &self.chitchat {
                let _ = writeln!(s, "  {:<10}{:>10}{:>10}{:>8}{:>8}{:>11}", "chitchat", pct(c.distinct_1), pct(c.distinct_2), "-", self.meteor, self.bertscore);
            }
            if let Some(b) = self.task_bleu {
                let _ = writeln!(s, "  {:<10}{:>10}{:>10}{:>8}{:>8}{:>11}", "task", "-", "-", pct(b), self.meteor, self.bertscore);
            }
        }
        let _ = writeln!(s, "\nTransition turns");
        let _ = writeln!(s, "  {:<8}{:>7}{:>14}{:>10}", "prompt", "cases", "transition", "keyword");
        for (name, ts) in [("d", &self.domain_ts), ("d-v", &self.dsv_ts)] {
            match ts {
                Some(t) => {
                    let _ = writeln!(s, "  {:<8}{:>7}{:>14}{:>10}", name, t.cases, pct(t.transition_accuracy), pct(t.keyword_accuracy));
                }
                None => {
                    let _ = writeln!(s, "  {:<8}{:>7}{:>14}{:>10}", name, 0, "-", "-");
                }
            }
        }
        s
    }
}

/// d scores over every gold non-UNK trace, d-v scores over traces whose gold has a value.
/// Records carry the gold prompt so the keyword checks use gold labels.
pub fn score_traces(traces: &[DialogueTrace]) -> (Option<TransitionScores>, Option<TransitionScores>) {
    let mut d = Vec::new();
    let mut dv = Vec::new();
    for t in traces {
        let Some(gold) = TransitionPrompt::richest(&t.gold) else { continue };
        let generated = t.case.as_ref().map(|c| c.generated.clone()).unwrap_or_default();
        let rec = |kind, info| GenEvalRecord {
            generated: generated.clone(),
            reference: String::new(),
            prompt: Some(TransitionPrompt { kind, info }),
            mode: ResponseMode::Transition,
        };
        d.push(rec(PromptKind::DomainOnly, TransitionInfo::domain(t.gold.domain)));
        if gold.kind == PromptKind::DomainSlotValue {
            dv.push(rec(PromptKind::DomainSlotValue, gold.info.clone()));
        }
    }
    let score = |rs: &[GenEvalRecord], is_dv: bool| {
        (!rs.is_empty()).then(|| TransitionScores {
            cases: rs.len(),
            transition_accuracy: transition_accuracy(rs).unwrap_or(0.0),
            keyword_accuracy: if is_dv { dv_accuracy(rs) } else { d_accuracy(rs) }.unwrap_or(0.0),
        })
    };
    (score(&d, false), score(&dv, true))
}

/// Combined evaluation at annotated transition turns: the extractor runs on the
/// chit-chat history and its gated output (or the gold annotation) prompts the generator.
pub fn run_batch(dialogues: &[Dialogue], tie: &TieModel, g: &Generator, opts: BatchOptions) -> Result<EvaluationReport> {
    let mut report = EvaluationReport::empty(opts);
    let mut examples = Vec::new();
    for d in dialogues {
        if let Err(e) = d.validate() {
            tracing::warn!(dialogue = %d.id, error = %e, "skipping dialogue without usable gold");
            report.skipped.push(d.id.clone());
            continue;
        }
        let ex = match derive_iob(d, &tie.tokenizer, tie.config.max_tokens) {
            Ok(ex) => ex,
            Err(e) => {
                tracing::warn!(dialogue = %d.id, error = %e, "skipping dialogue without usable gold");
                report.skipped.push(d.id.clone());
                continue;
            }
        };
        let out = tie.predict(&ex, tie.default_mode())?;
        examples.push(ex);
        let gold = TransitionInfo::new(d.transition.domain, d.transition.slot, d.transition.value.clone());
        let prompt = match opts.prompt_source {
            PromptSource::Tie => gated_prompt(&out),
            PromptSource::Gold => TransitionPrompt::richest(&gold),
        };
        let case = match prompt {
            Some(p) => {
                let seed = case_seed(opts.seed, &d.id, 0);
                let (input, generated) = transition_response(g, &d.turns[..d.transition.turn_index], &p, seed)?;
                let sentence = transition_sentence(&generated).map(str::to_string);
                let normal = generated.split(crate::templates::MARKER).next().unwrap_or_default().trim().to_string();
                let domain_hit = sentence
                    .as_deref()
                    .is_some_and(|s| crate::metrics::contains_domain_word(s, gold.domain));
                let value_hit = gold.value.as_deref().filter(|_| !gold.slot.is_unk()).map(|v| {
                    domain_hit && sentence.as_deref().is_some_and(|s| crate::metrics::contains_value(s, v))
                });
                Some(TransitionCase {
                    prompt: p.build()?,
                    prompt_kind: p.kind,
                    input,
                    has_transition: sentence.is_some(),
                    generated,
                    normal,
                    sentence,
                    domain_hit,
                    value_hit,
                })
            }
            None => None,
        };
        report.traces.push(DialogueTrace {
            dialogue: d.id.clone(),
            gold,
            tie: Some(out),
            case,
        });
    }
    report.dialogues = report.traces.len();
    if !examples.is_empty() {
        let ev = evaluate_tie(tie, &examples, tie.default_mode())?;
        report.tie = Some(TieSection {
            examples: ev.examples,
            domain_accuracy: ev.domain.accuracy,
            domain_f1: ev.domain.weighted_f1,
            slot_accuracy: ev.slot.accuracy,
            slot_f1: ev.slot.weighted_f1,
            semantic_acc: ev.semantic_acc,
            sen_sf_acc: ev.sen_sf_acc,
            sf_f1: ev.sf_f1,
        });
    }
    if opts.normal_turns && !report.traces.is_empty() {
        let kept: Vec<Dialogue> = dialogues.iter().filter(|d| !report.skipped.contains(&d.id)).cloned().collect();
        let ge = evaluate_generator(
            g,
            &kept,
            GenEvalOptions {
                seed: opts.seed,
                normal: true,
                transitions: false,
            },
        )?;
        report.chitchat = ge.chitchat;
        report.task_bleu = ge.task_bleu;
    }
    report.rescore();
    Ok(report)
}
