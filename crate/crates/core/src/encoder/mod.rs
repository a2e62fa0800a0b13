//! Tokenizer and the bidirectional contextual encoder.

pub mod tokenizer;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{Mat, Module, Param, Rng64, Transformer, TransformerCache, TransformerConfig};

pub use tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            layers: 2,
            heads: 4,
            ffn_mult: 4,
            dropout: 0.1,
            max_len: 256,
        }
    }
}

impl EncoderConfig {
    pub fn transformer(&self, vocab: usize) -> TransformerConfig {
        TransformerConfig {
            vocab,
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            ffn_mult: self.ffn_mult,
            dropout: self.dropout,
            max_len: self.max_len,
            causal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub h_cls: Array1<f64>,
    pub h_tokens: Mat,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub net: Transformer,
}

impl Encoder {
    pub fn new(config: EncoderConfig, vocab: usize, rng: &mut Rng64) -> Result<Self> {
        Ok(Self {
            net: Transformer::new(config.transformer(vocab), rng)?,
        })
    }

    pub fn d_model(&self) -> usize {
        self.net.config.d_model
    }

    /// Eval-mode encoding; deterministic.
    pub fn encode(&self, tokens: &[u32], mask: &[bool]) -> Result<EncoderOutput> {
        Ok(self.forward(tokens, mask, None)?.0)
    }

    pub fn forward(
        &self,
        tokens: &[u32],
        mask: &[bool],
        rng: Option<&mut Rng64>,
    ) -> Result<(EncoderOutput, TransformerCache)> {
        let (h, cache) = self.net.forward(tokens, mask, None, rng)?;
        let h_cls = if h.nrows() > 0 {
            h.row(0).to_owned()
        } else {
            Array1::zeros(h.ncols())
        };
        Ok((EncoderOutput { h_cls, h_tokens: h }, cache))
    }

    /// `dh_tokens` must already include the `h_cls` gradient in row 0.
    pub fn backward(&mut self, cache: &TransformerCache, dh_tokens: &Mat) {
        self.net.backward(cache, dh_tokens, None);
    }
}

impl Module for Encoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.net.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.net.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn small() -> Encoder {
        let cfg = EncoderConfig {
            d_model: 16,
            heads: 2,
            max_len: 32,
            ..Default::default()
        };
        Encoder::new(cfg, 30, &mut Rng64::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn single_cls_shape() {
        let out = small().encode(&[1], &[true]).unwrap();
        assert_eq!(out.h_tokens.dim(), (1, 16));
        assert_eq!(out.h_cls.len(), 16);
    }

    #[test]
    fn deterministic_in_eval() {
        let e = small();
        let a = e.encode(&[1, 9, 10, 2], &[true; 4]).unwrap();
        let b = e.encode(&[1, 9, 10, 2], &[true; 4]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_sentences_differ() {
        let e = small();
        let a = e.encode(&[1, 9, 10, 2], &[true; 4]).unwrap();
        let b = e.encode(&[1, 11, 12, 2], &[true; 4]).unwrap();
        assert_ne!(a.h_cls, b.h_cls);
        assert!(a.h_tokens.iter().all(|v| v.is_finite()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn pad_tail_does_not_leak(
            body in proptest::collection::vec(8u32..30, 1..10),
            tail_a in proptest::collection::vec(0u32..30, 0..8),
            seed in 0u64..1000,
        ) {
            let e = small();
            let mut tail_b = tail_a.clone();
            let mut r = Rng64::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            tail_b.shuffle(&mut r);
            for t in tail_b.iter_mut().step_by(2) { *t = (*t + 5) % 30; }
            let mut tokens_a = vec![1u32];
            tokens_a.extend(&body);
            let n_unmasked = tokens_a.len();
            let mut tokens_b = tokens_a.clone();
            tokens_a.extend(&tail_a);
            tokens_b.extend(&tail_b);
            let mask: Vec<bool> = (0..tokens_a.len()).map(|i| i < n_unmasked).collect();
            let a = e.encode(&tokens_a, &mask).unwrap();
            let b = e.encode(&tokens_b, &mask).unwrap();
            for i in 0..n_unmasked {
                prop_assert_eq!(a.h_tokens.row(i), b.h_tokens.row(i));
            }
            // a shorter pad tail leaves the unmasked rows unchanged as well
            let short = e.encode(&tokens_a[..n_unmasked], &mask[..n_unmasked]).unwrap();
            for i in 0..n_unmasked {
                for (x, y) in a.h_tokens.row(i).iter().zip(short.h_tokens.row(i)) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }
}
