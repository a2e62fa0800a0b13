use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::softmax;

/// Which decoding preset a response uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    Chitchat,
    Task,
    Transition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub top_k: usize,
    pub top_p: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(top_k: usize, top_p: f64, seed: u64) -> Result<Self> {
        let s = Self { top_k, top_p, seed };
        s.validate()?;
        Ok(s)
    }

    /// chit-chat k=5 p=0.9, task k=10 p=0.5, transition turn k=5 p=0.9.
    pub fn for_mode(mode: ResponseMode, seed: u64) -> Self {
        let (top_k, top_p) = match mode {
            ResponseMode::Chitchat | ResponseMode::Transition => (5, 0.9),
            ResponseMode::Task => (10, 0.5),
        };
        Self { top_k, top_p, seed }
    }

    pub fn greedy() -> Self {
        Self {
            top_k: 1,
            top_p: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }
}

/// Candidates after top-k then nucleus truncation, most probable first (lower id on ties),
/// with probabilities renormalised over the kept set.
pub fn truncate(logits: &[f64], top_k: usize, top_p: f64) -> Vec<(usize, f64)> {
    let probs = softmax(logits);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(top_k.max(1));
    let k_mass: f64 = order.iter().map(|&i| probs[i]).sum();
    let mut kept = Vec::with_capacity(order.len());
    let mut cum = 0.0;
    for &i in &order {
        kept.push(i);
        cum += probs[i] / k_mass;
        if cum >= top_p {
            break;
        }
    }
    let mass: f64 = kept.iter().map(|&i| probs[i]).sum();
    kept.into_iter().map(|i| (i, probs[i] / mass)).collect()
}

pub fn sample<R: Rng + ?Sized>(logits: &[f64], top_k: usize, top_p: f64, rng: &mut R) -> usize {
    let cands = truncate(logits, top_k, top_p);
    if cands.len() == 1 {
        return cands[0].0;
    }
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for &(i, p) in &cands {
        cum += p;
        if u < cum {
            return i;
        }
    }
    cands.last().expect("non-empty").0
}
