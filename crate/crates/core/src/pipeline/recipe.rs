use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;
use crate::encoder::Tokenizer;
use crate::error::Result;
use crate::templates::TemplateBank;
use crate::tsg::{
    sentence_examples, train_tsg, train_unified, transition_examples, unified_examples, AdapterConfig, DecoderConfig,
    GenTrainConfig, GenTrainReport, Generator, TsgMode,
};

/// Everything needed to go from a corpus to a generator with a transition sentence extension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorRecipe {
    pub decoder: DecoderConfig,
    pub unified: GenTrainConfig,
    pub tsg: GenTrainConfig,
    pub adapter: AdapterConfig,
    pub mode: TsgMode,
    pub prompted: bool,
    /// Realizations per template added to base training as context-free sentences.
    pub sentence_pretraining: usize,
}

impl Default for GeneratorRecipe {
    fn default() -> Self {
        Self {
            decoder: DecoderConfig::default(),
            unified: GenTrainConfig::default(),
            tsg: GenTrainConfig::default(),
            adapter: AdapterConfig::default(),
            mode: TsgMode::Adapter,
            prompted: true,
            sentence_pretraining: 2,
        }
    }
}

impl GeneratorRecipe {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.unified.seed = seed;
        self.tsg.seed = seed;
        self
    }
}

/// Train the unified chit-chat/task base.
pub fn train_base(
    train: &[Dialogue],
    valid: &[Dialogue],
    bank: &TemplateBank,
    tokenizer: Tokenizer,
    recipe: &GeneratorRecipe,
) -> Result<(Generator, GenTrainReport)> {
    let turns = recipe.decoder.context_turns;
    let mut examples = unified_examples(train, turns);
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.unified.seed ^ 0x5e47);
    examples.extend(sentence_examples(train, bank, recipe.sentence_pretraining, &mut rng));
    train_unified(&examples, &unified_examples(valid, turns), tokenizer, recipe.decoder, recipe.unified)
}

/// Extend a base with the transition sentence generator on template-augmented transition turns.
pub fn train_extension(
    base: &Generator,
    train: &[Dialogue],
    valid: &[Dialogue],
    bank: &TemplateBank,
    recipe: &GeneratorRecipe,
) -> Result<(Generator, GenTrainReport)> {
    let turns = base.config.context_turns;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.tsg.seed ^ 0x7472);
    let t = transition_examples(train, bank, recipe.prompted, turns, &mut rng)?;
    let v = transition_examples(valid, bank, recipe.prompted, turns, &mut rng)?;
    train_tsg(base, &t, &v, recipe.adapter, recipe.mode, recipe.prompted, recipe.tsg)
}
