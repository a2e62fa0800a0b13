use std::path::Path;

use ndarray::s;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Bank, Checkpoint, CheckpointKind};
use crate::encoder::tokenizer::END_ID;
use crate::encoder::Tokenizer;
use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy, visit_child, visit_child_mut, Activation, AdapterBank, AdapterVariant, Mat, Module, Param, Rng64,
    Transformer, TransformerCache, TransformerConfig,
};

use super::sampler::{sample, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub context_turns: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub max_new_tokens: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            layers: 2,
            heads: 4,
            ffn_mult: 4,
            context_turns: 3,
            max_len: 256,
            dropout: 0.1,
            max_new_tokens: 48,
        }
    }
}

impl DecoderConfig {
    pub fn transformer(&self, vocab: usize) -> TransformerConfig {
        TransformerConfig {
            vocab,
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            ffn_mult: self.ffn_mult,
            dropout: self.dropout,
            max_len: self.max_len,
            causal: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub variant: AdapterVariant,
    pub bottleneck: usize,
    pub activation: Activation,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            variant: AdapterVariant::Pfeiffer,
            bottleneck: 16,
            activation: Activation::Gelu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsgMode {
    /// Base frozen, only adapter parameters train.
    Adapter,
    /// Every base parameter trains; no adapters.
    FullFinetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredConfig {
    decoder: DecoderConfig,
    adapter: Option<AdapterConfig>,
    mode: Option<TsgMode>,
    prompted: bool,
}

/// Causal decoder with a tied output head and an optional adapter bank.
#[derive(Debug, Clone)]
pub struct Generator {
    pub config: DecoderConfig,
    pub tokenizer: Tokenizer,
    pub base: Transformer,
    pub adapters: Option<AdapterBank>,
    pub adapter_config: Option<AdapterConfig>,
    pub mode: Option<TsgMode>,
    /// Trained with transition prompts in the input.
    pub prompted: bool,
}

impl Generator {
    pub fn new(config: DecoderConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        let mut rng = Rng64::seed_from_u64(seed);
        let base = Transformer::new(config.transformer(tokenizer.len()), &mut rng)?;
        Ok(Self {
            config,
            tokenizer,
            base,
            adapters: None,
            adapter_config: None,
            mode: None,
            prompted: false,
        })
    }

    pub fn attach_adapters(&mut self, cfg: AdapterConfig, seed: u64) -> Result<()> {
        if cfg.bottleneck == 0 {
            return Err(Error::Config("adapter bottleneck must be positive".into()));
        }
        if let Some(existing) = &self.adapter_config {
            if existing.variant != cfg.variant {
                return Err(Error::AdapterMismatch {
                    found: existing.variant.to_string(),
                    requested: cfg.variant.to_string(),
                });
            }
        }
        let mut rng = Rng64::seed_from_u64(seed ^ 0x4164_6170);
        self.adapters = Some(AdapterBank::new(
            cfg.variant,
            self.config.layers,
            self.config.d_model,
            cfg.bottleneck,
            cfg.activation,
            &mut rng,
        ));
        self.adapter_config = Some(cfg);
        Ok(())
    }

    pub fn base_param_count(&self) -> usize {
        self.base.param_count()
    }

    pub fn adapter_param_count(&self) -> usize {
        self.adapters.as_ref().map_or(0, |a| a.param_count())
    }

    /// Adapter share of all parameters.
    pub fn trainable_fraction(&self) -> f64 {
        let a = self.adapter_param_count() as f64;
        a / (a + self.base_param_count() as f64)
    }

    pub fn base_hash(&self) -> String {
        crate::checkpoint::module_hash(&self.base)
    }

    fn active(&self, use_adapters: bool) -> Option<&AdapterBank> {
        self.adapters.as_ref().filter(|_| use_adapters)
    }

    /// Mean token cross-entropy of `target` given `input`, accumulating gradients.
    pub fn loss_backward(
        &mut self,
        input: &[u32],
        target: &[u32],
        use_adapters: bool,
        rng: Option<&mut Rng64>,
    ) -> Result<f64> {
        let (loss, dlogits, h, cache, start) = self.forward_loss(input, target, use_adapters, rng)?;
        let h_rows = h.slice(s![start.., ..]).to_owned();
        let dh_rows = self.base.logits_backward(&h_rows, &dlogits);
        let mut dh = Mat::zeros(h.dim());
        dh.slice_mut(s![start.., ..]).assign(&dh_rows);
        let adapters = if use_adapters { self.adapters.as_mut() } else { None };
        self.base.backward(&cache, &dh, adapters);
        Ok(loss)
    }

    /// Mean token cross-entropy in eval mode.
    pub fn loss(&self, input: &[u32], target: &[u32], use_adapters: bool) -> Result<f64> {
        Ok(self.forward_loss(input, target, use_adapters, None)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn forward_loss(
        &self,
        input: &[u32],
        target: &[u32],
        use_adapters: bool,
        rng: Option<&mut Rng64>,
    ) -> Result<(f64, Mat, Mat, TransformerCache, usize)> {
        if input.is_empty() || target.is_empty() {
            return Err(Error::Empty("input or target"));
        }
        let seq: Vec<u32> = input.iter().chain(target).copied().collect();
        let tokens = &seq[..seq.len() - 1];
        let mask = vec![true; tokens.len()];
        let (h, cache) = self.base.forward(tokens, &mask, self.active(use_adapters), rng)?;
        let start = input.len() - 1;
        let logits = self.base.logits(&h.slice(s![start.., ..]).to_owned());
        let n = target.len() as f64;
        let mut loss = 0.0;
        let mut dlogits = Mat::zeros(logits.dim());
        for (j, &gold) in target.iter().enumerate() {
            let row: Vec<f64> = logits.row(j).to_vec();
            let (l, g) = cross_entropy(&row, gold as usize);
            loss += l / n;
            for (k, gk) in g.into_iter().enumerate() {
                dlogits[[j, k]] = gk / n;
            }
        }
        Ok((loss, dlogits, h, cache, start))
    }

    /// Next-token logits after `seq`.
    pub fn next_logits(&self, seq: &[u32], use_adapters: bool) -> Result<Vec<f64>> {
        let mask = vec![true; seq.len()];
        let (h, _) = self.base.forward(seq, &mask, self.active(use_adapters), None)?;
        let last = h.slice(s![h.nrows() - 1.., ..]).to_owned();
        Ok(self.base.logits(&last).row(0).to_vec())
    }

    /// Sample until `[END]`, `max_new_tokens` or the context limit. `[END]` is not returned.
    pub fn generate(
        &self,
        input: &[u32],
        sampler: &SamplerConfig,
        use_adapters: bool,
    ) -> Result<Vec<u32>> {
        sampler.validate()?;
        if input.len() > self.config.max_len {
            return Err(Error::TooLong {
                len: input.len(),
                max: self.config.max_len,
            });
        }
        let mut rng = Rng64::seed_from_u64(sampler.seed);
        let mut seq = input.to_vec();
        let mut out = Vec::new();
        while out.len() < self.config.max_new_tokens && seq.len() < self.config.max_len {
            let logits = self.next_logits(&seq, use_adapters)?;
            let t = sample(&logits, sampler.top_k, sampler.top_p, &mut rng) as u32;
            if t == END_ID {
                break;
            }
            seq.push(t);
            out.push(t);
        }
        Ok(out)
    }

    pub fn generate_text(&self, input: &[u32], sampler: &SamplerConfig, use_adapters: bool) -> Result<String> {
        Ok(self.tokenizer.decode(&self.generate(input, sampler, use_adapters)?))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let stored = StoredConfig {
            decoder: self.config,
            adapter: self.adapter_config,
            mode: self.mode,
            prompted: self.prompted,
        };
        let mut ck = Checkpoint::new(CheckpointKind::Tsg, serde_json::to_value(stored)?, self.tokenizer.clone());
        let frozen = self.mode == Some(TsgMode::Adapter);
        ck.banks.insert("base".into(), Bank::capture(&self.base, frozen));
        if let Some(a) = &self.adapters {
            ck.banks.insert("adapter".into(), Bank::capture(a, false));
        }
        ck.meta.extra.insert("base_hash".into(), self.base_hash().into());
        Ok(ck)
    }

    /// Rebuild from a checkpoint; `requested` must match the stored adapter variant when given.
    pub fn from_checkpoint(ck: &Checkpoint, requested: Option<AdapterVariant>) -> Result<Self> {
        ck.expect_kind(CheckpointKind::Tsg)?;
        let stored: StoredConfig = serde_json::from_value(ck.config.clone())?;
        if let (Some(req), Some(found)) = (requested, stored.adapter.map(|a| a.variant)) {
            if req != found {
                return Err(Error::AdapterMismatch {
                    found: found.to_string(),
                    requested: req.to_string(),
                });
            }
        }
        let mut g = Self::new(stored.decoder, ck.vocab.clone(), 0)?;
        ck.bank("base")?.restore(&mut g.base)?;
        if let Some(cfg) = stored.adapter {
            g.attach_adapters(cfg, 0)?;
            let bank = g.adapters.as_mut().expect("just attached");
            ck.bank("adapter")?.restore(bank)?;
        }
        g.mode = stored.mode;
        g.prompted = stored.prompted;
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, None)
    }
}

impl Module for Generator {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_child("base", &self.base, f);
        if let Some(a) = &self.adapters {
            visit_child("adapter", a, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child_mut("base", &mut self.base, f);
        if let Some(a) = self.adapters.as_mut() {
            visit_child_mut("adapter", a, f);
        }
    }
}
