//! Live session stepping and batch evaluation over an extractor and a generator.

mod recipe;
mod report;

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::module_hash;
use crate::corpus::{Dialogue, DomainLabel, Mode, Turn};
use crate::encoder::Tokenizer;
use crate::error::{Error, Result};
use crate::templates::TemplateBank;
use crate::tie::{TieModel, TieOutput, TransitionInfo};
use crate::tsg::eval::transition_response;
use crate::tsg::{
    case_seed, context_window, encode_input, split_transition, Generator, PromptKind, ResponseMode, SamplerConfig,
    TransitionPrompt,
};

pub use recipe::{train_base, train_extension, GeneratorRecipe};
pub use report::{
    run_batch, score_traces, BatchOptions, DialogueTrace, EvaluationReport, PromptSource, TieSection, TransitionCase,
};

/// Shared vocabulary: training-split turns and acts, template words and prompt syntax.
pub fn build_vocabulary(train: &[Dialogue], bank: &TemplateBank) -> Tokenizer {
    let mut texts: Vec<String> = Vec::new();
    for d in train {
        for t in &d.turns {
            texts.push(t.text.clone());
            texts.extend(t.acts.clone());
        }
    }
    texts.extend(bank.iter().map(|t| t.pattern.replace(crate::templates::VALUE, " ")));
    let labels = DomainLabel::ALL[1..]
        .iter()
        .map(|d| d.to_string())
        .chain(crate::corpus::SlotLabel::ALL[1..].iter().map(|s| s.to_string()))
        .collect::<Vec<_>>()
        .join(" ");
    texts.push(format!("( domain = , slot = value = ) {labels}"));
    Tokenizer::build(&texts, 1)
}

/// Act string used for task turns when no replay script is supplied.
pub fn default_acts(domain: DomainLabel) -> &'static str {
    match domain {
        DomainLabel::Train | DomainLabel::Unk => "train{request(day=?)}",
        DomainLabel::Restaurant => "restaurant{request(people=?)}",
        DomainLabel::Attraction => "attraction{inform(area=centre)}",
        DomainLabel::Taxi => "taxi{request(leave=?)}",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub history: Vec<Turn>,
    pub mode: Mode,
    pub last_tie: Option<TieOutput>,
    pub transitioned: bool,
    pub task_domain: Option<DomainLabel>,
    /// Act strings replayed for task turns, front first.
    #[serde(default)]
    pub acts: VecDeque<String>,
}

impl SessionState {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            history: Vec::new(),
            mode: Mode::Chitchat,
            last_tie: None,
            transitioned: false,
            task_domain: None,
            acts: VecDeque::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub response: String,
    pub transition_sentence: Option<String>,
    pub info: TransitionInfo,
    /// Exact prompt string given to the generator at a transition turn.
    pub prompt: Option<String>,
    pub tie: Option<TieOutput>,
    pub mode: ResponseMode,
    /// Index of the system turn in the session history.
    pub turn_index: usize,
}

/// Prompt for an extraction: domain-slot-value only when the span agrees with the heads.
pub fn gated_prompt(out: &TieOutput) -> Option<TransitionPrompt> {
    if out.info.domain.is_unk() {
        return None;
    }
    let p = TransitionPrompt::richest(&out.info)?;
    if p.kind == PromptKind::DomainSlotValue && !out.consistent {
        return Some(TransitionPrompt {
            kind: PromptKind::DomainOnly,
            info: TransitionInfo::domain(out.info.domain),
        });
    }
    Some(p)
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub tie: TieModel,
    pub generator: Generator,
    pub seed: u64,
}

impl Pipeline {
    pub fn new(tie: TieModel, generator: Generator, seed: u64) -> Self {
        Self { tie, generator, seed }
    }

    pub fn load(tie: impl AsRef<Path>, tsg: impl AsRef<Path>, seed: u64) -> Result<Self> {
        Ok(Self::new(TieModel::load(tie)?, Generator::load(tsg)?, seed))
    }

    /// Parameter hashes of the loaded extractor, generator base and adapter bank.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        let mut h = BTreeMap::new();
        h.insert("tie".to_string(), module_hash(&self.tie));
        h.insert("tsg_base".to_string(), self.generator.base_hash());
        if let Some(a) = &self.generator.adapters {
            h.insert("tsg_adapter".to_string(), module_hash(a));
        }
        h
    }

    fn sampler(&self, state: &SessionState, mode: ResponseMode) -> SamplerConfig {
        SamplerConfig::for_mode(mode, case_seed(self.seed, &state.id, state.history.len()))
    }

    /// Normal response with adapters bypassed.
    fn respond(&self, state: &SessionState, mode: ResponseMode, acts: Option<&str>) -> Result<String> {
        let g = &self.generator;
        let context = context_window(&state.history, g.config.context_turns);
        let budget = g.config.max_len.saturating_sub(g.config.max_new_tokens.min(g.config.max_len / 2));
        let input = encode_input(&g.tokenizer, None, &context, acts, budget)?;
        g.generate_text(&input, &self.sampler(state, mode), false)
    }

    /// Generate at a transition turn with adapters on, returning (response, prompt string).
    pub fn transition(&self, state: &SessionState, prompt: &TransitionPrompt) -> Result<(String, String)> {
        let seed = case_seed(self.seed, &state.id, state.history.len());
        let (_, text) = transition_response(&self.generator, &state.history, prompt, seed)?;
        Ok((text, prompt.build()?))
    }

    /// Append the user turn and produce the system reply. The first non-UNK extraction in
    /// chit-chat triggers the single transition; the session then continues in task mode.
    pub fn step(&self, state: &mut SessionState, user_text: &str) -> Result<StepOutput> {
        if user_text.trim().is_empty() {
            return Err(Error::Empty("user text"));
        }
        state.history.push(Turn::user(user_text.trim(), state.mode));
        let mut out = StepOutput {
            response: String::new(),
            transition_sentence: None,
            info: TransitionInfo::unk(),
            prompt: None,
            tie: None,
            mode: ResponseMode::Chitchat,
            turn_index: state.history.len(),
        };
        let mut acts_used = None;
        if state.mode == Mode::Chitchat && !state.transitioned {
            let chitchat: Vec<Turn> = state.history.iter().filter(|t| t.mode == Mode::Chitchat).cloned().collect();
            let tie = self.tie.extract_turns(&chitchat)?;
            out.info = tie.info.clone();
            if let Some(prompt) = gated_prompt(&tie) {
                let (text, prompt_text) = self.transition(state, &prompt)?;
                let (normal, sentence) = split_transition(&text);
                out.response = normal;
                out.transition_sentence = sentence;
                out.prompt = Some(prompt_text);
                out.mode = ResponseMode::Transition;
                state.transitioned = true;
                state.task_domain = Some(tie.info.domain);
            } else {
                out.response = self.respond(state, ResponseMode::Chitchat, None)?;
            }
            state.last_tie = Some(tie.clone());
            out.tie = Some(tie);
        } else if state.mode == Mode::Task {
            let acts = state
                .acts
                .pop_front()
                .unwrap_or_else(|| default_acts(state.task_domain.unwrap_or(DomainLabel::Unk)).to_string());
            out.response = self.respond(state, ResponseMode::Task, Some(&acts))?;
            out.mode = ResponseMode::Task;
            acts_used = Some(acts);
        } else {
            out.response = self.respond(state, ResponseMode::Chitchat, None)?;
        }
        let shown = match &out.transition_sentence {
            Some(s) => format!("{} {s}", out.response).trim().to_string(),
            None => out.response.clone(),
        };
        let mode = if out.mode == ResponseMode::Task { Mode::Task } else { Mode::Chitchat };
        state.history.push(Turn::system(shown, mode, acts_used));
        if state.transitioned {
            state.mode = Mode::Task;
        }
        Ok(out)
    }
}
