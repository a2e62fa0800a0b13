use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::encoder::Tokenizer;
use crate::error::{Error, Result};
use crate::nn::{Adam, Module, Rng64};

use super::{AdapterConfig, DecoderConfig, GenExample, Generator, TsgMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            batch_size: 20,
            max_epochs: 20,
            patience: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenTrainReport {
    pub epochs: Vec<GenEpochLog>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub trainable_params: usize,
    pub total_params: usize,
    pub trainable_fraction: f64,
    pub base_hash_before: String,
    pub base_hash_after: String,
}

type Pair = (Vec<u32>, Vec<u32>);

fn encode_all(examples: &[GenExample], tok: &Tokenizer, max_len: usize) -> Vec<Pair> {
    examples
        .iter()
        .filter_map(|e| match e.encode(tok, max_len) {
            Ok(p) => Some(p),
            Err(err) => {
                tracing::warn!(dialogue = %e.dialogue, error = %err, "skipping generation example");
                None
            }
        })
        .collect()
}

/// Token-weighted mean cross-entropy.
pub fn mean_loss(g: &Generator, examples: &[GenExample], use_adapters: bool) -> Result<f64> {
    let pairs = encode_all(examples, &g.tokenizer, g.config.max_len);
    token_loss(g, &pairs, use_adapters)
}

fn token_loss(g: &Generator, pairs: &[Pair], use_adapters: bool) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, t) in pairs {
        sum += g.loss(i, t, use_adapters)? * t.len() as f64;
        n += t.len();
    }
    Ok(sum / n as f64)
}

fn trainable(g: &Generator) -> usize {
    let mut n = 0;
    g.visit(&mut |_, p| {
        if !p.frozen {
            n += p.len()
        }
    });
    n
}

fn fit(
    mut g: Generator,
    train: &[GenExample],
    valid: &[GenExample],
    use_adapters: bool,
    cfg: GenTrainConfig,
) -> Result<(Generator, GenTrainReport)> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let train = encode_all(train, &g.tokenizer, g.config.max_len);
    if train.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let valid = encode_all(valid, &g.tokenizer, g.config.max_len);
    let valid = if valid.is_empty() { train.clone() } else { valid };
    let base_hash_before = g.base_hash();
    let trainable_params = trainable(&g);
    let total_params = g.param_count();
    let mut opt = Adam::new(cfg.lr);
    let mut rng = Rng64::seed_from_u64(cfg.seed ^ 0x7473_6700);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (g.clone(), 0usize, f64::INFINITY);
    let mut epochs = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            for &i in chunk {
                let (inp, tgt) = &train[i];
                total += g.loss_backward(inp, tgt, use_adapters, Some(&mut rng))?;
            }
            opt.step(&mut [("gen", &mut g as &mut dyn Module)], 1.0 / chunk.len() as f64);
        }
        let train_loss = total / train.len() as f64;
        let valid_loss = token_loss(&g, &valid, use_adapters)?;
        tracing::info!(epoch, train_loss, valid_loss, "generator epoch");
        epochs.push(GenEpochLog {
            epoch,
            train_loss,
            valid_loss,
            valid_perplexity: valid_loss.exp(),
        });
        if valid_loss < best.2 {
            best = (g.clone(), epoch, valid_loss);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (g, best_epoch, best_valid_loss) = best;
    let base_hash_after = g.base_hash();
    let report = GenTrainReport {
        epochs,
        best_epoch,
        best_valid_loss,
        trainable_params,
        total_params,
        trainable_fraction: trainable_params as f64 / total_params as f64,
        base_hash_before,
        base_hash_after,
    };
    Ok((g, report))
}

/// Train the unified chit-chat/task decoder from scratch; early stopping on validation perplexity.
pub fn train_unified(
    train: &[GenExample],
    valid: &[GenExample],
    tokenizer: Tokenizer,
    decoder: DecoderConfig,
    cfg: GenTrainConfig,
) -> Result<(Generator, GenTrainReport)> {
    if train.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let g = Generator::new(decoder, tokenizer, cfg.seed)?;
    fit(g, train, valid, false, cfg)
}

/// Extend a trained base for transition sentences, either through a fresh adapter bank
/// on the frozen base or by updating every base weight.
pub fn train_tsg(
    base: &Generator,
    train: &[GenExample],
    valid: &[GenExample],
    adapter: AdapterConfig,
    mode: TsgMode,
    prompted: bool,
    cfg: GenTrainConfig,
) -> Result<(Generator, GenTrainReport)> {
    if train.is_empty() {
        return Err(Error::Empty("transition corpus"));
    }
    let mut g = base.clone();
    g.prompted = prompted;
    g.mode = Some(mode);
    match mode {
        TsgMode::Adapter => {
            g.attach_adapters(adapter, cfg.seed)?;
            g.base.set_frozen(true);
        }
        TsgMode::FullFinetune => {
            g.adapters = None;
            g.adapter_config = None;
            g.base.set_frozen(false);
        }
    }
    let use_adapters = mode == TsgMode::Adapter;
    let (g, report) = fit(g, train, valid, use_adapters, cfg)?;
    if use_adapters && report.base_hash_before != report.base_hash_after {
        return Err(Error::Invariant {
            dialogue: "-".into(),
            reason: "frozen base parameters changed during adapter training".into(),
        });
    }
    Ok((g, report))
}
