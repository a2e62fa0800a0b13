//! Seeded synthetic chit-chat-to-task corpus in the ingestion schema.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dialogue, DomainLabel, Mode, SlotLabel, Split, TransitionAnnotation, Turn};

const DEFAULT_SPEC: &str = include_str!("../../data/synth_default.json");

/// Values and chit-chat frames for one domain-slot pair. Frames contain `{value}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairVocabulary {
    pub domain: DomainLabel,
    pub slot: SlotLabel,
    pub values: Vec<String>,
    pub frames: Vec<String>,
}

/// One task-mode exchange. Placeholders name slots, e.g. `{destination}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskExchange {
    pub user: String,
    pub acts: String,
    pub system: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dialogues: usize,
    pub unk_fraction: f64,
    pub domain_only_fraction: f64,
    /// Relative train/valid/test weights.
    pub split_weights: [f64; 3],
    pub min_exchanges: usize,
    pub max_exchanges: usize,
    pub pairs: Vec<PairVocabulary>,
    pub domain_frames: BTreeMap<DomainLabel, Vec<String>>,
    pub chitchat_user: Vec<String>,
    pub chitchat_system: Vec<String>,
    /// Scripts of consecutive exchanges per domain.
    pub tasks: BTreeMap<DomainLabel, Vec<Vec<TaskExchange>>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_SPEC).expect("embedded synth spec parses")
    }
}

impl SynthSpec {
    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth spec: {m}")));
        if self.pairs.is_empty() || self.chitchat_user.is_empty() || self.chitchat_system.is_empty() {
            return bad("pairs and chit-chat pools must be non-empty");
        }
        if self.min_exchanges == 0 || self.min_exchanges > self.max_exchanges {
            return bad("need 1 <= min_exchanges <= max_exchanges");
        }
        if !(0.0..=1.0).contains(&(self.unk_fraction + self.domain_only_fraction)) {
            return bad("unk and domain-only fractions must sum to at most 1");
        }
        if self.split_weights.iter().any(|w| *w < 0.0) || self.split_weights.iter().sum::<f64>() <= 0.0 {
            return bad("split weights must be non-negative with a positive sum");
        }
        for p in &self.pairs {
            if p.values.is_empty() || p.frames.iter().any(|f| !f.contains("{value}")) || p.frames.is_empty() {
                return bad(&format!("pair {}-{} needs values and {{value}} frames", p.domain, p.slot));
            }
        }
        for d in &DomainLabel::ALL[1..] {
            if self.tasks.get(d).is_none_or(|s| s.is_empty()) {
                return bad(&format!("no task scripts for {d}"));
            }
        }
        Ok(())
    }

    fn slot_value(&self, domain: DomainLabel, slot: &str, rng: &mut ChaCha8Rng) -> Option<String> {
        self.pairs
            .iter()
            .find(|p| p.domain == domain && p.slot.as_str() == slot)
            .and_then(|p| p.values.choose(rng).cloned())
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Unk,
    DomainOnly,
    Pair,
}

/// Generate a corpus that satisfies every ingestion invariant.
///
/// Exactly `round(n * unk_fraction)` dialogues are UNK and `round(n * domain_only_fraction)`
/// carry a domain without a slot; splits follow the weights in shuffled order.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Vec<Dialogue>> {
    spec.check()?;
    let n = spec.dialogues;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_unk = (n as f64 * spec.unk_fraction).round() as usize;
    let n_dom = ((n as f64 * spec.domain_only_fraction).round() as usize).min(n - n_unk);
    let mut kinds: Vec<Kind> = std::iter::repeat_n(Kind::Unk, n_unk)
        .chain(std::iter::repeat_n(Kind::DomainOnly, n_dom))
        .chain(std::iter::repeat_n(Kind::Pair, n - n_unk - n_dom))
        .collect();
    kinds.shuffle(&mut rng);

    let total: f64 = spec.split_weights.iter().sum();
    let n_train = (n as f64 * spec.split_weights[0] / total).round() as usize;
    let n_valid = ((n as f64 * spec.split_weights[1] / total).round() as usize).min(n - n_train);

    let domains = &DomainLabel::ALL[1..];
    let mut out = Vec::with_capacity(n);
    for (i, kind) in kinds.into_iter().enumerate() {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
        let exchanges = rng.random_range(spec.min_exchanges..=spec.max_exchanges);
        let mention = rng.random_range(0..exchanges);
        let mut user_pool = spec.chitchat_user.clone();
        user_pool.shuffle(&mut rng);

        let (domain, slot, value, mention_text) = match kind {
            Kind::Unk => (DomainLabel::Unk, SlotLabel::Unk, None, None),
            Kind::DomainOnly => {
                let d = *domains.choose(&mut rng).expect("non-empty");
                let text = spec.domain_frames.get(&d).and_then(|f| f.choose(&mut rng)).cloned();
                (d, SlotLabel::Unk, None, text)
            }
            Kind::Pair => {
                let p = spec.pairs.choose(&mut rng).expect("non-empty");
                let v = p.values.choose(&mut rng).expect("non-empty").clone();
                let frame = p.frames.choose(&mut rng).expect("non-empty");
                (p.domain, p.slot, Some(v.clone()), Some(frame.replace("{value}", &v)))
            }
        };

        let mut turns = Vec::new();
        for e in 0..exchanges {
            let text = match (&mention_text, e == mention) {
                (Some(t), true) => t.clone(),
                _ => user_pool[e % user_pool.len()].clone(),
            };
            turns.push(Turn::user(text, Mode::Chitchat));
            let reply = spec.chitchat_system.choose(&mut rng).expect("non-empty");
            turns.push(Turn::system(reply.clone(), Mode::Chitchat, None));
        }
        let turn_index = turns.len() - 1;

        let task_domain = if domain.is_unk() {
            *domains.choose(&mut rng).expect("non-empty")
        } else {
            domain
        };
        let scripts = &spec.tasks[&task_domain];
        let script = scripts.choose(&mut rng).expect("checked non-empty");
        let mut filled: BTreeMap<String, String> = BTreeMap::new();
        if let Some(v) = &value {
            filled.insert(slot.as_str().to_string(), v.clone());
        }
        for ex in script {
            let user = fill(&ex.user, task_domain, spec, &mut filled, &mut rng);
            let acts = fill(&ex.acts, task_domain, spec, &mut filled, &mut rng);
            let system = fill(&ex.system, task_domain, spec, &mut filled, &mut rng);
            turns.push(Turn::user(user, Mode::Task));
            turns.push(Turn::system(system, Mode::Task, Some(acts)));
        }

        let d = Dialogue {
            id: format!("synth-{seed}-{i:05}"),
            split,
            turns,
            transition: TransitionAnnotation {
                domain,
                slot,
                value_turn: value.as_ref().map(|_| 2 * mention),
                value,
                turn_index,
            },
        };
        d.validate()?;
        out.push(d);
    }
    Ok(out)
}

fn fill(
    template: &str,
    domain: DomainLabel,
    spec: &SynthSpec,
    filled: &mut BTreeMap<String, String>,
    rng: &mut ChaCha8Rng,
) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else { break };
        let key = &rest[open + 1..open + close];
        out.push_str(&rest[..open]);
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase()) {
            out.push('{');
            rest = &rest[open + 1..];
            continue;
        }
        if !filled.contains_key(key) {
            if let Some(v) = spec.slot_value(domain, key, rng) {
                filled.insert(key.to_string(), v);
            }
        }
        match filled.get(key) {
            Some(v) => out.push_str(v),
            None => out.push_str(&rest[open..=open + close]),
        }
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    out
}
