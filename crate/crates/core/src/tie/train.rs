use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::corpus::{derive_iob, Dialogue, DomainLabel, SlotLabel, TrainingExample};
use crate::encoder::Tokenizer;
use crate::error::{Error, Result};
use crate::metrics::{classification_scores, semantic_acc, sen_sf_acc, sf_f1, ClassScores, TieEvalRecord};
use crate::nn::{Adam, Module, Rng64};

use super::{ExtractMode, TieConfig, TieModel};

/// Tagged examples for every dialogue whose value can be located; others are skipped with a warning.
pub fn examples_from(dialogues: &[Dialogue], tokenizer: &Tokenizer, max_tokens: usize) -> Vec<TrainingExample> {
    dialogues
        .iter()
        .filter_map(|d| match derive_iob(d, tokenizer, max_tokens) {
            Ok(ex) => Some(ex),
            Err(e) => {
                tracing::warn!(dialogue = %d.id, error = %e, "skipping example");
                None
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieEvaluation {
    pub examples: usize,
    pub domain: ClassScores,
    pub slot: ClassScores,
    pub semantic_acc: f64,
    pub sen_sf_acc: f64,
    pub sf_f1: f64,
    pub records: Vec<TieEvalRecord>,
}

pub fn evaluate_tie(model: &TieModel, examples: &[TrainingExample], mode: ExtractMode) -> Result<TieEvaluation> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut records = Vec::with_capacity(examples.len());
    for ex in examples {
        let out = model.predict(ex, mode)?;
        records.push(TieEvalRecord {
            gold_domain: ex.domain,
            pred_domain: out.info.domain,
            gold_slot: ex.slot,
            pred_slot: SlotLabel::from_index(crate::nn::argmax(&out.slot_probs)).expect("7 classes"),
            gold_tags: ex.tags.clone(),
            pred_tags: out.tags,
        });
    }
    let gd: Vec<DomainLabel> = records.iter().map(|r| r.gold_domain).collect();
    let pd: Vec<DomainLabel> = records.iter().map(|r| r.pred_domain).collect();
    let gs: Vec<SlotLabel> = records.iter().map(|r| r.gold_slot).collect();
    let ps: Vec<SlotLabel> = records.iter().map(|r| r.pred_slot).collect();
    Ok(TieEvaluation {
        examples: records.len(),
        domain: classification_scores(&gd, &pd, &DomainLabel::ALL)?,
        slot: classification_scores(&gs, &ps, &SlotLabel::ALL)?,
        semantic_acc: semantic_acc(&records)?,
        sen_sf_acc: sen_sf_acc(&records)?,
        sf_f1: sf_f1(&records)?,
        records,
    })
}

/// Early-stopping metric: semantic accuracy, or joint domain+slot accuracy without slot filling.
fn selection_metric(model: &TieModel, examples: &[TrainingExample]) -> Result<f64> {
    let ev = evaluate_tie(model, examples, model.default_mode())?;
    if model.config.use_slot_filling {
        Ok(ev.semantic_acc)
    } else {
        let both = ev
            .records
            .iter()
            .filter(|r| r.gold_domain == r.pred_domain && r.gold_slot == r.pred_slot)
            .count();
        Ok(both as f64 / ev.records.len() as f64)
    }
}

/// Train the extractor with Adam on mean per-example loss; keeps the best epoch by the
/// validation metric and stops after `patience` epochs without improvement.
pub fn train_tie(
    train: &[TrainingExample],
    valid: &[TrainingExample],
    tokenizer: Tokenizer,
    config: TieConfig,
) -> Result<(TieModel, TrainReport)> {
    if train.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let valid = if valid.is_empty() { train } else { valid };
    let mut model = TieModel::new(config, tokenizer)?;
    let mut opt = Adam::new(config.lr);
    let mut rng = Rng64::seed_from_u64(config.seed ^ 0x7469_6500);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut epochs = Vec::new();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            for &i in chunk {
                total += model.loss_backward(&train[i], Some(&mut rng))?.total();
            }
            let scale = 1.0 / chunk.len() as f64;
            opt.step(&mut [("tie", &mut model as &mut dyn Module)], scale);
            if let Some(crf) = model.crf.as_mut() {
                crf.pin();
            }
        }
        let train_loss = total / train.len() as f64;
        let metric = selection_metric(&model, valid)?;
        tracing::info!(epoch, train_loss, valid_metric = metric, "tie epoch");
        epochs.push(EpochLog {
            epoch,
            train_loss,
            valid_metric: metric,
        });
        if metric > best.2 {
            best = (model.clone(), epoch, metric);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                tracing::info!(epoch, best_epoch = best.1, "early stopping");
                break;
            }
        }
    }
    let (model, best_epoch, best_metric) = best;
    Ok((
        model,
        TrainReport {
            epochs,
            best_epoch,
            best_metric,
        },
    ))
}
