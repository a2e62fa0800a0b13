use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Dialogue;
use crate::error::Result;
use crate::metrics::{bleu, d_accuracy, distinct_n, dv_accuracy, transition_accuracy, GenEvalRecord};
use crate::tie::TransitionInfo;

use super::data::{context_window, encode_input, unified_examples};
use super::{Generator, PromptKind, ResponseMode, SamplerConfig, TransitionPrompt};

/// Stable per-case seed derived from the run seed, dialogue id and case index.
pub fn case_seed(seed: u64, dialogue: &str, case: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(dialogue.as_bytes());
    h.update((case as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenEvalOptions {
    pub seed: u64,
    /// Score chit-chat diversity and task BLEU on every system turn.
    pub normal: bool,
    pub transitions: bool,
}

impl Default for GenEvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            normal: true,
            transitions: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityScores {
    pub responses: usize,
    pub distinct_1: f64,
    pub distinct_2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionScores {
    pub cases: usize,
    pub transition_accuracy: f64,
    /// d accuracy for domain prompts, d-v accuracy for domain-slot-value prompts.
    pub keyword_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenTrace {
    pub dialogue: String,
    pub mode: ResponseMode,
    pub input: String,
    pub record: GenEvalRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenEvaluation {
    pub chitchat: Option<DiversityScores>,
    pub task_bleu: Option<f64>,
    pub domain_ts: Option<TransitionScores>,
    pub dsv_ts: Option<TransitionScores>,
    pub traces: Vec<GenTrace>,
}

/// Score a generator on held-out dialogues. Normal turns run with adapters off; transition
/// turns use the gold prompt (omitted from the input for models trained without prompts).
pub fn evaluate_generator(g: &Generator, dialogues: &[Dialogue], opts: GenEvalOptions) -> Result<GenEvaluation> {
    let mut traces = Vec::new();
    let mut chitchat = Vec::new();
    let mut task = (Vec::new(), Vec::new());
    if opts.normal {
        let examples = unified_examples(dialogues, g.config.context_turns);
        for (i, ex) in examples.iter().enumerate() {
            let (input, _) = ex.encode(&g.tokenizer, g.config.max_len)?;
            let sampler = SamplerConfig::for_mode(ex.mode, case_seed(opts.seed, &ex.dialogue, i));
            let generated = g.generate_text(&input, &sampler, false)?;
            match ex.mode {
                ResponseMode::Task => {
                    task.0.push(generated.clone());
                    task.1.push(g.tokenizer.decode(&g.tokenizer.tokenize(&ex.target)));
                }
                _ => chitchat.push(generated.clone()),
            }
            traces.push(GenTrace {
                dialogue: ex.dialogue.clone(),
                mode: ex.mode,
                input: g.tokenizer.decode(&input),
                record: GenEvalRecord {
                    generated,
                    reference: ex.target.clone(),
                    prompt: None,
                    mode: ex.mode,
                },
            });
        }
    }
    let mut cases: [Vec<GenEvalRecord>; 2] = [Vec::new(), Vec::new()];
    if opts.transitions {
        for d in dialogues.iter().filter(|d| !d.transition.domain.is_unk()) {
            let tr = &d.transition;
            let mut prompts = vec![TransitionPrompt::new(PromptKind::DomainOnly, TransitionInfo::domain(tr.domain))?];
            if let Some(p) = TransitionPrompt::richest(&TransitionInfo::new(tr.domain, tr.slot, tr.value.clone()))
                .filter(|p| p.kind == PromptKind::DomainSlotValue)
            {
                prompts.push(p);
            }
            for (k, prompt) in prompts.into_iter().enumerate() {
                let seed = case_seed(opts.seed, &d.id, 10_000 + k);
                let (input, generated) = transition_response(g, &d.turns[..tr.turn_index], &prompt, seed)?;
                let record = GenEvalRecord {
                    generated,
                    reference: d.turns[tr.turn_index].text.clone(),
                    prompt: Some(prompt.clone()),
                    mode: ResponseMode::Transition,
                };
                traces.push(GenTrace {
                    dialogue: d.id.clone(),
                    mode: ResponseMode::Transition,
                    input,
                    record: record.clone(),
                });
                cases[(prompt.kind == PromptKind::DomainSlotValue) as usize].push(record);
            }
        }
    }
    let score = |rs: &[GenEvalRecord], dv: bool| -> Result<Option<TransitionScores>> {
        if rs.is_empty() {
            return Ok(None);
        }
        Ok(Some(TransitionScores {
            cases: rs.len(),
            transition_accuracy: transition_accuracy(rs)?,
            keyword_accuracy: if dv { dv_accuracy(rs)? } else { d_accuracy(rs)? },
        }))
    };
    Ok(GenEvaluation {
        chitchat: (!chitchat.is_empty()).then(|| DiversityScores {
            responses: chitchat.len(),
            distinct_1: distinct_n(&chitchat, 1),
            distinct_2: distinct_n(&chitchat, 2),
        }),
        task_bleu: (!task.0.is_empty()).then(|| bleu(&task.0, &task.1)),
        domain_ts: score(&cases[0], false)?,
        dsv_ts: score(&cases[1], true)?,
        traces,
    })
}

/// Generate at a transition turn: prompt (when the model was trained with prompts) plus
/// the recent context, adapters on. Returns the decoded input and the response.
pub(crate) fn transition_response(
    g: &Generator,
    history: &[crate::corpus::Turn],
    prompt: &TransitionPrompt,
    seed: u64,
) -> Result<(String, String)> {
    let prompt_text = if g.prompted { Some(prompt.build()?) } else { None };
    let context = context_window(history, g.config.context_turns);
    let budget = g.config.max_len.saturating_sub(g.config.max_new_tokens.min(g.config.max_len / 2));
    let input = encode_input(&g.tokenizer, prompt_text.as_deref(), &context, None, budget)?;
    let sampler = SamplerConfig::for_mode(ResponseMode::Transition, seed);
    let generated = g.generate_text(&input, &sampler, true)?;
    Ok((g.tokenizer.decode(&input), generated))
}
