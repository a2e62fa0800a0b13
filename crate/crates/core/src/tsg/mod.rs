//! Transition sentence generator: a unified causal decoder for chit-chat and task
//! responses, extended with adapters and prompt conditioning for transition turns.

mod data;
pub(crate) mod eval;
mod model;
mod prompt;
mod sampler;
mod train;

pub use data::{
    context_window, encode_input, frame_turn, sentence_examples, split_transition, transition_examples, unified_examples, GenExample,
    DEFAULT_CONTEXT_TURNS,
};
pub use eval::{case_seed, evaluate_generator, DiversityScores, GenEvalOptions, GenEvaluation, GenTrace, TransitionScores};
pub use model::{AdapterConfig, DecoderConfig, Generator, TsgMode};
pub use prompt::{build_prompt, PromptKind, TransitionPrompt};
pub use sampler::{sample, truncate, ResponseMode, SamplerConfig};
pub use train::{mean_loss, train_tsg, train_unified, GenEpochLog, GenTrainConfig, GenTrainReport};
