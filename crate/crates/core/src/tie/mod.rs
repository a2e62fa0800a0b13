//! Transition info extractor: joint domain/slot classification over `h_cls` and
//! slot filling over token states, decoded with a linear-chain CRF.

mod crf;
mod train;

use std::path::Path;

use ndarray::Axis;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Bank, Checkpoint, CheckpointKind};
use crate::corpus::{
    iob::frame_context, pair_index, DomainLabel, SlotLabel, Tag, TrainingExample, Turn, DEFAULT_MAX_TOKENS,
    PAIRS,
};
use crate::encoder::{Encoder, EncoderConfig, EncoderOutput, Tokenizer};
use crate::error::{Error, Result};
use crate::metrics::spans;
use crate::nn::{cross_entropy, dropout, softmax, visit_child, visit_child_mut, Linear, Mat, Module, Param, Rng64};

pub use crf::{Crf, BANNED};
pub use train::{evaluate_tie, examples_from, train_tie, EpochLog, TieEvaluation, TrainReport};

/// Extracted `(domain, slot, value)`; domain and slot may be UNK.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransitionInfo {
    pub domain: DomainLabel,
    pub slot: SlotLabel,
    #[serde(default)]
    pub value: Option<String>,
}

impl TransitionInfo {
    pub fn new(domain: DomainLabel, slot: SlotLabel, value: Option<String>) -> Self {
        Self { domain, slot, value }
    }

    pub fn unk() -> Self {
        Self::new(DomainLabel::Unk, SlotLabel::Unk, None)
    }

    pub fn domain(domain: DomainLabel) -> Self {
        Self::new(domain, SlotLabel::Unk, None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractMode {
    WithCrf,
    WithoutCrf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TieConfig {
    pub encoder: EncoderConfig,
    pub use_crf: bool,
    pub use_slot_filling: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Dropout on head inputs during training.
    pub head_dropout: f64,
    pub max_tokens: usize,
}

impl Default for TieConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            use_crf: true,
            use_slot_filling: true,
            lr: 5e-5,
            batch_size: 32,
            max_epochs: 30,
            patience: 3,
            seed: 0,
            head_dropout: 0.1,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieOutput {
    pub info: TransitionInfo,
    pub domain_probs: Vec<f64>,
    pub slot_probs: Vec<f64>,
    /// One tag index per input position.
    pub tags: Vec<usize>,
    pub path_score: f64,
    /// The decoded value span agrees with the classifier heads.
    pub consistent: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TieModel {
    pub config: TieConfig,
    pub tokenizer: Tokenizer,
    pub encoder: Encoder,
    pub domain_head: Linear,
    pub slot_head: Linear,
    pub emission_head: Option<Linear>,
    pub crf: Option<Crf>,
}

/// Per-part losses of one example.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub domain: f64,
    pub slot: f64,
    pub slot_filling: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.domain + self.slot + self.slot_filling
    }
}

impl TieModel {
    pub fn new(config: TieConfig, tokenizer: Tokenizer) -> Result<Self> {
        let mut rng = Rng64::seed_from_u64(config.seed);
        let encoder = Encoder::new(config.encoder, tokenizer.len(), &mut rng)?;
        let d = config.encoder.d_model;
        let domain_head = Linear::new(d, DomainLabel::COUNT, &mut rng);
        let slot_head = Linear::new(d, SlotLabel::COUNT, &mut rng);
        let (emission_head, crf) = if config.use_slot_filling {
            (
                Some(Linear::new(d, Tag::COUNT, &mut rng)),
                config.use_crf.then(Crf::iob),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            config,
            tokenizer,
            encoder,
            domain_head,
            slot_head,
            emission_head,
            crf,
        })
    }

    pub fn default_mode(&self) -> ExtractMode {
        if self.crf.is_some() {
            ExtractMode::WithCrf
        } else {
            ExtractMode::WithoutCrf
        }
    }

    /// Domain and slot distributions from `h_cls` (eval mode).
    pub fn classify_heads(&self, enc: &EncoderOutput) -> (Vec<f64>, Vec<f64>) {
        let h = enc.h_cls.view().insert_axis(Axis(0)).to_owned();
        let d = self.domain_head.forward(&h);
        let s = self.slot_head.forward(&h);
        (
            softmax(d.as_slice().expect("contiguous")),
            softmax(s.as_slice().expect("contiguous")),
        )
    }

    /// `N × 22` emission scores, or `None` without a slot-filling head.
    pub fn emissions(&self, enc: &EncoderOutput) -> Option<Mat> {
        self.emission_head.as_ref().map(|h| h.forward(&enc.h_tokens))
    }

    pub fn extract(&self, enc: &EncoderOutput, tokens: &[u32], mask: &[bool], mode: ExtractMode) -> Result<TieOutput> {
        let (domain_probs, slot_probs) = self.classify_heads(enc);
        let domain = DomainLabel::from_index(crate::nn::argmax(&domain_probs)).expect("5 classes");
        let slot = SlotLabel::from_index(crate::nn::argmax(&slot_probs)).expect("7 classes");
        let n = tokens.len();
        let mut flags = Vec::new();

        let em = self.emissions(enc);
        let (tags, path_score) = match (&em, mode) {
            (None, _) => {
                let tags = tokens
                    .iter()
                    .zip(mask)
                    .map(|(&t, &m)| {
                        if !m {
                            Tag::Pad
                        } else if t == crate::encoder::tokenizer::CLS_ID {
                            Tag::Cls
                        } else if t == crate::encoder::tokenizer::SEP_ID {
                            Tag::Sep
                        } else {
                            Tag::Outside
                        }
                        .index()
                    })
                    .collect();
                (tags, 0.0)
            }
            (Some(em), ExtractMode::WithCrf) => {
                let crf = self
                    .crf
                    .as_ref()
                    .ok_or_else(|| Error::Config("model was trained without a CRF".into()))?;
                let (mut tags, score) = crf.viterbi(em, mask)?;
                for (t, &m) in tags.iter_mut().zip(mask) {
                    if !m {
                        *t = Tag::Pad.index();
                    }
                }
                (tags, score)
            }
            (Some(em), ExtractMode::WithoutCrf) => {
                let mut score = 0.0;
                let tags = (0..n)
                    .map(|i| {
                        if !mask[i] {
                            return Tag::Pad.index();
                        }
                        let row = em.row(i);
                        let best = crate::nn::argmax(row.as_slice().expect("contiguous"));
                        score += row[best];
                        best
                    })
                    .collect();
                (tags, score)
            }
        };

        let mut info = TransitionInfo::new(domain, slot, None);
        let mut consistent = true;
        if domain.is_unk() {
            if !slot.is_unk() {
                flags.push(format!("slot head predicted {slot} under UNK domain"));
            }
            info = TransitionInfo::unk();
        } else if !slot.is_unk() {
            let target = pair_index(domain, slot);
            let mut best: Option<(f64, usize, usize)> = None;
            for s in spans(&tags) {
                if Some(s.pair) != target {
                    continue;
                }
                let score: f64 = match &em {
                    Some(em) => (s.start..s.end).map(|i| em[[i, tags[i]]]).sum(),
                    None => 0.0,
                };
                if best.is_none_or(|(b, _, _)| score >= b) {
                    best = Some((score, s.start, s.end));
                }
            }
            match best {
                Some((_, a, b)) => info.value = Some(self.tokenizer.decode(&tokens[a..b])),
                None => {
                    consistent = false;
                    if target.is_none() {
                        flags.push(format!("{domain}-{slot} is not a valid pair"));
                    } else {
                        flags.push(format!("no {domain}-{slot} span decoded"));
                    }
                }
            }
            let stray: Vec<String> = spans(&tags)
                .iter()
                .filter(|s| Some(s.pair) != target)
                .map(|s| format!("{}-{}", PAIRS[s.pair].0, PAIRS[s.pair].1))
                .collect();
            if !stray.is_empty() {
                flags.push(format!("spans disagreeing with heads: {}", stray.join(", ")));
            }
        }
        Ok(TieOutput {
            info,
            domain_probs,
            slot_probs,
            tags,
            path_score,
            consistent,
            flags,
        })
    }

    /// Run the extractor over a chit-chat history.
    pub fn extract_turns(&self, turns: &[Turn]) -> Result<TieOutput> {
        let (tokens, _, _) = frame_context(turns, &self.tokenizer, self.config.max_tokens);
        let mask = vec![true; tokens.len()];
        let enc = self.encoder.encode(&tokens, &mask)?;
        self.extract(&enc, &tokens, &mask, self.default_mode())
    }

    pub fn predict(&self, ex: &TrainingExample, mode: ExtractMode) -> Result<TieOutput> {
        let enc = self.encoder.encode(&ex.tokens, &ex.mask)?;
        self.extract(&enc, &ex.tokens, &ex.mask, mode)
    }

    /// Eval-mode loss of one example.
    pub fn loss(&self, ex: &TrainingExample) -> Result<LossParts> {
        self.clone().loss_backward(ex, None)
    }

    /// Loss of one example; gradients accumulate into every parameter. Dropout is
    /// active when `rng` is given.
    pub fn loss_backward(&mut self, ex: &TrainingExample, mut rng: Option<&mut Rng64>) -> Result<LossParts> {
        let (enc, cache) = self.encoder.forward(&ex.tokens, &ex.mask, rng.as_deref_mut())?;
        let rate = self.config.head_dropout;
        let h = enc.h_cls.view().insert_axis(Axis(0)).to_owned();
        let (hc, mask_c) = dropout(h, rate, rng.as_deref_mut());

        let dl = self.domain_head.forward(&hc);
        let (l_d, g_d) = cross_entropy(dl.as_slice().expect("contiguous"), ex.domain.index());
        let sl = self.slot_head.forward(&hc);
        let (l_s, g_s) = cross_entropy(sl.as_slice().expect("contiguous"), ex.slot.index());
        let g_d = Mat::from_shape_vec((1, g_d.len()), g_d).expect("row");
        let g_s = Mat::from_shape_vec((1, g_s.len()), g_s).expect("row");
        let mut dh_cls = self.domain_head.backward(&hc, &g_d) + self.slot_head.backward(&hc, &g_s);
        if let Some(m) = &mask_c {
            dh_cls *= m;
        }

        let mut dh_tokens = Mat::zeros(enc.h_tokens.raw_dim());
        let mut l_sf = 0.0;
        if let Some(head) = self.emission_head.as_mut() {
            let (ht, mask_t) = dropout(enc.h_tokens.clone(), rate, rng);
            let em = head.forward(&ht);
            let dem = match self.crf.as_mut() {
                Some(crf) => {
                    let (nll, dem) = crf.nll_backward(&em, &ex.mask, &ex.tags, 1.0)?;
                    l_sf = nll;
                    dem
                }
                None => {
                    let count = ex.mask.iter().filter(|&&m| m).count();
                    if count == 0 {
                        return Err(Error::AllMasked);
                    }
                    let mut dem = Mat::zeros(em.raw_dim());
                    for i in (0..em.nrows()).filter(|&i| ex.mask[i]) {
                        let (l, g) = cross_entropy(em.row(i).as_slice().expect("contiguous"), ex.tags[i]);
                        l_sf += l / count as f64;
                        for (j, v) in g.into_iter().enumerate() {
                            dem[[i, j]] = v / count as f64;
                        }
                    }
                    dem
                }
            };
            let mut dht = head.backward(&ht, &dem);
            if let Some(m) = &mask_t {
                dht *= m;
            }
            dh_tokens += &dht;
        }
        {
            let mut row = dh_tokens.row_mut(0);
            row += &dh_cls.row(0);
        }
        self.encoder.backward(&cache, &dh_tokens);
        Ok(LossParts {
            domain: l_d,
            slot: l_s,
            slot_filling: l_sf,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(CheckpointKind::Tie, serde_json::to_value(self.config)?, self.tokenizer.clone());
        ck.banks.insert("encoder".into(), Bank::capture(&self.encoder, false));
        ck.banks.insert("heads".into(), Bank::capture(&Heads(self), false));
        if let Some(crf) = &self.crf {
            ck.banks.insert("crf".into(), Bank::capture(crf, false));
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CheckpointKind::Tie)?;
        let config: TieConfig = serde_json::from_value(ck.config.clone())?;
        let mut model = Self::new(config, ck.vocab.clone())?;
        ck.bank("encoder")?.restore(&mut model.encoder)?;
        ck.bank("heads")?.restore(&mut HeadsMut(&mut model))?;
        if let Some(crf) = model.crf.as_mut() {
            ck.bank("crf")?.restore(crf)?;
            crf.pin();
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

struct Heads<'a>(&'a TieModel);
struct HeadsMut<'a>(&'a mut TieModel);

impl Module for Heads<'_> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_child("domain", &self.0.domain_head, f);
        visit_child("slot", &self.0.slot_head, f);
        if let Some(e) = &self.0.emission_head {
            visit_child("emission", e, f);
        }
    }

    fn visit_mut(&mut self, _: &mut dyn FnMut(&str, &mut Param)) {
        unreachable!("read-only view")
    }
}

impl Module for HeadsMut<'_> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        Heads(self.0).visit(f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child_mut("domain", &mut self.0.domain_head, f);
        visit_child_mut("slot", &mut self.0.slot_head, f);
        if let Some(e) = self.0.emission_head.as_mut() {
            visit_child_mut("emission", e, f);
        }
    }
}

impl Module for TieModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_child("encoder", &self.encoder, f);
        visit_child("heads", &Heads(self), f);
        if let Some(crf) = &self.crf {
            visit_child("crf", crf, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child_mut("encoder", &mut self.encoder, f);
        visit_child_mut("heads", &mut HeadsMut(self), f);
        if let Some(crf) = self.crf.as_mut() {
            visit_child_mut("crf", crf, f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{derive_iob, sample_dialogue};
    use rand::Rng;

    fn tiny(use_crf: bool, use_slot_filling: bool) -> (TieModel, TrainingExample) {
        let d = sample_dialogue();
        let tok = Tokenizer::build(d.turns.iter().map(|t| t.text.as_str()), 1);
        let ex = derive_iob(&d, &tok, 64).unwrap();
        let config = TieConfig {
            encoder: EncoderConfig {
                d_model: 8,
                layers: 1,
                heads: 2,
                ffn_mult: 2,
                dropout: 0.1,
                max_len: 64,
            },
            use_crf,
            use_slot_filling,
            ..Default::default()
        };
        (TieModel::new(config, tok).unwrap(), ex)
    }

    #[test]
    fn heads_are_normalised_and_uniform_at_zero() {
        let (mut m, ex) = tiny(true, true);
        let enc = m.encoder.encode(&ex.tokens, &ex.mask).unwrap();
        let (d, s) = m.classify_heads(&enc);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        m.domain_head = Linear::zeros(8, 5);
        m.slot_head = Linear::zeros(8, 7);
        let (d, s) = m.classify_heads(&enc);
        assert!(d.iter().all(|p| (p - 0.2).abs() < 1e-15));
        assert!(s.iter().all(|p| (p - 1.0 / 7.0).abs() < 1e-15));
        let one = m.encoder.encode(&[1], &[true]).unwrap();
        assert_eq!(m.emissions(&one).unwrap().dim(), (1, 22));
    }

    #[test]
    fn ablation_has_no_emission_params() {
        let (m, ex) = tiny(true, false);
        let ck = m.to_checkpoint().unwrap();
        assert!(!ck.banks.contains_key("crf"));
        assert!(ck.bank("heads").unwrap().params.keys().all(|k| !k.starts_with("emission")));
        let out = m.predict(&ex, ExtractMode::WithoutCrf).unwrap();
        assert!(out.info.value.is_none());
    }

    #[test]
    fn unk_domain_forces_unk_info() {
        let (mut m, ex) = tiny(true, true);
        m.domain_head = Linear::zeros(8, 5);
        m.domain_head.b.value[[0, 0]] = 10.0;
        m.slot_head = Linear::zeros(8, 7);
        m.slot_head.b.value[[0, 2]] = 10.0;
        let out = m.predict(&ex, ExtractMode::WithCrf).unwrap();
        assert_eq!(out.info, TransitionInfo::unk());
        assert!(!out.flags.is_empty());
        assert_eq!(out.tags.len(), ex.tokens.len());
    }

    #[test]
    fn value_recovered_from_matching_span() {
        let (mut m, ex) = tiny(true, true);
        m.domain_head = Linear::zeros(8, 5);
        m.domain_head.b.value[[0, DomainLabel::Train.index()]] = 10.0;
        m.slot_head = Linear::zeros(8, 7);
        m.slot_head.b.value[[0, SlotLabel::Destination.index()]] = 10.0;
        // emissions follow the gold tags exactly
        let mut head = Linear::zeros(8, 22);
        head.w.value.fill(0.0);
        m.emission_head = Some(head);
        let enc = m.encoder.encode(&ex.tokens, &ex.mask).unwrap();
        let mut em = Mat::zeros((ex.tokens.len(), 22));
        for (i, &t) in ex.tags.iter().enumerate() {
            em[[i, t]] = 20.0;
        }
        let out = {
            let crf = m.crf.as_ref().unwrap();
            let (tags, _) = crf.viterbi(&em, &ex.mask).unwrap();
            assert_eq!(tags, ex.tags);
            let mut fake = enc.clone();
            fake.h_tokens = em.clone();
            // identity emission head over the 22-dim fake states
            let mut id = Linear::zeros(22, 22);
            for j in 0..22 {
                id.w.value[[j, j]] = 1.0;
            }
            let mut m2 = m.clone();
            m2.emission_head = Some(id);
            m2.extract(&fake, &ex.tokens, &ex.mask, ExtractMode::WithCrf).unwrap()
        };
        assert_eq!(out.info.value.as_deref(), Some("london kings cross"));
        assert!(out.consistent);
    }

    #[test]
    fn head_and_emission_gradients() {
        let mut rng = Rng64::seed_from_u64(3);
        for (crf, sf) in [(true, true), (false, true)] {
            let (mut m, ex) = tiny(crf, sf);
            m.crf.iter_mut().for_each(|c| {
                c.visit_mut(&mut |_, p| p.value.mapv_inplace(|_| rng.random_range(-0.5..0.5)));
                c.pin();
            });
            m.zero_grad();
            m.loss_backward(&ex, None).unwrap();
            let mut names = Vec::new();
            m.visit(&mut |n, p| {
                if n.starts_with("heads") || n.starts_with("crf") || n.contains("blocks.0.ff1") {
                    names.push((n.to_string(), p.value.dim()));
                }
            });
            let eps = 1e-4;
            for (name, (r, c)) in names {
                for _ in 0..3 {
                    let (i, j) = (rng.random_range(0..r), rng.random_range(0..c));
                    let mut analytic = 0.0;
                    m.visit(&mut |n, p| {
                        if n == name {
                            analytic = p.grad[[i, j]];
                        }
                    });
                    let bump = |delta: f64| {
                        let mut m2 = m.clone();
                        m2.visit_mut(&mut |n, p| {
                            if n == name {
                                p.value[[i, j]] += delta;
                            }
                        });
                        m2.loss(&ex).unwrap().total()
                    };
                    let num = (bump(eps) - bump(-eps)) / (2.0 * eps);
                    let rel = (num - analytic).abs() / num.abs().max(analytic.abs()).max(1e-7);
                    assert!(rel <= 1e-4 || (num - analytic).abs() < 1e-9, "{name}[{i},{j}]: {num} vs {analytic}");
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (m, ex) = tiny(true, true);
        let back = TieModel::from_checkpoint(&m.to_checkpoint().unwrap()).unwrap();
        assert_eq!(back.predict(&ex, ExtractMode::WithCrf).unwrap(), m.predict(&ex, ExtractMode::WithCrf).unwrap());
    }
}
