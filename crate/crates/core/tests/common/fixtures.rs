//! Randomized metric fixtures compared against the brute-force oracles.
#![allow(dead_code)]

use proactive_switch::corpus::{DomainLabel, SlotLabel, Tag};
use proactive_switch::metrics::{self, TieEvalRecord};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles;

const WORDS: [&str; 12] = [
    "the", "train", "to", "norwich", "a", "table", "for", "two", "please", "taxi", "today", "?",
];

fn tags(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..len)
        .map(|_| match rng.random_range(0..10) {
            0..=3 => Tag::Outside.index(),
            4 => rng.random_range(0..3),
            5..=6 => Tag::Begin(rng.random_range(0..3)).index(),
            _ => Tag::Inside(rng.random_range(0..3)).index(),
        })
        .collect()
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(0..9);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn record(rng: &mut ChaCha8Rng) -> TieEvalRecord {
    let len = rng.random_range(1..10);
    let gold_tags = tags(len, rng);
    let pred_tags = if rng.random_bool(0.4) { gold_tags.clone() } else { tags(len, rng) };
    let domain = |rng: &mut ChaCha8Rng| DomainLabel::from_index(rng.random_range(0..DomainLabel::COUNT)).unwrap();
    let slot = |rng: &mut ChaCha8Rng| SlotLabel::from_index(rng.random_range(0..3)).unwrap();
    TieEvalRecord {
        gold_domain: domain(rng),
        pred_domain: domain(rng),
        gold_slot: slot(rng),
        pred_slot: slot(rng),
        gold_tags,
        pred_tags,
    }
}

/// Largest absolute deviation per metric over `n` random fixtures.
pub fn max_deviations(n: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = vec![
        ("sf_f1", 0.0f64),
        ("sen_sf_acc", 0.0),
        ("semantic_acc", 0.0),
        ("bleu", 0.0),
        ("distinct_1", 0.0),
        ("distinct_2", 0.0),
        ("weighted_f1", 0.0),
        ("accuracy", 0.0),
    ];
    let mut note = |i: usize, a: f64, b: f64| worst[i].1 = worst[i].1.max((a - b).abs());
    for _ in 0..n {
        let k = rng.random_range(1..8);
        let recs: Vec<TieEvalRecord> = (0..k).map(|_| record(&mut rng)).collect();
        let golds: Vec<Vec<usize>> = recs.iter().map(|r| r.gold_tags.clone()).collect();
        let preds: Vec<Vec<usize>> = recs.iter().map(|r| r.pred_tags.clone()).collect();
        note(0, metrics::sf_f1(&recs).unwrap(), oracles::sf_f1(&golds, &preds));
        note(1, metrics::sen_sf_acc(&recs).unwrap(), oracles::fraction(&recs, |r| r.gold_tags == r.pred_tags));
        note(
            2,
            metrics::semantic_acc(&recs).unwrap(),
            oracles::fraction(&recs, |r| {
                r.gold_domain == r.pred_domain && r.gold_slot == r.pred_slot && r.gold_tags == r.pred_tags
            }),
        );

        let cands: Vec<String> = (0..k).map(|_| sentence(&mut rng)).collect();
        let refs: Vec<String> = cands
            .iter()
            .map(|c| if rng.random_bool(0.5) { c.clone() } else { sentence(&mut rng) })
            .collect();
        note(3, metrics::bleu(&cands, &refs), oracles::bleu(&cands, &refs));
        note(4, metrics::distinct_n(&cands, 1), oracles::distinct(&cands, 1));
        note(5, metrics::distinct_n(&cands, 2), oracles::distinct(&cands, 2));

        let m = rng.random_range(1..30);
        let g: Vec<usize> = (0..m).map(|_| rng.random_range(0..5)).collect();
        let p: Vec<usize> = g.iter().map(|&x| if rng.random_bool(0.6) { x } else { rng.random_range(0..5) }).collect();
        let lib = metrics::classification_scores(&g, &p, &[0, 1, 2, 3, 4]).unwrap();
        let (acc, wf) = oracles::weighted_f1(&g, &p, 5);
        note(6, lib.weighted_f1, wf);
        note(7, lib.accuracy, acc);
    }
    worst
}
