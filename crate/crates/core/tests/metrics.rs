mod common;

use common::fixtures::max_deviations;
use proactive_switch::corpus::Tag;
use proactive_switch::metrics::{self, TieEvalRecord};
use proactive_switch::corpus::{DomainLabel, SlotLabel};
use proptest::prelude::*;

#[test]
fn agree_with_oracles() {
    for (name, dev) in max_deviations(1000, 11) {
        assert!(dev <= 1e-6, "{name} deviates by {dev}");
    }
}

fn tag_seq() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..Tag::COUNT, 1..12)
}

proptest! {
    #[test]
    fn sf_f1_of_identical_tags_is_one(tags in tag_seq()) {
        let r = TieEvalRecord {
            gold_domain: DomainLabel::Train,
            pred_domain: DomainLabel::Train,
            gold_slot: SlotLabel::Day,
            pred_slot: SlotLabel::Day,
            gold_tags: tags.clone(),
            pred_tags: tags,
        };
        prop_assert_eq!(metrics::sf_f1(std::slice::from_ref(&r)).unwrap(), 1.0);
        prop_assert_eq!(metrics::semantic_acc(&[r]).unwrap(), 1.0);
    }

    #[test]
    fn semantic_acc_never_exceeds_sentence_accuracy(pairs in prop::collection::vec((tag_seq(), 0..5usize, 0..5usize), 1..8)) {
        let recs: Vec<TieEvalRecord> = pairs
            .into_iter()
            .map(|(t, a, b)| {
                let mut pred = t.clone();
                pred[0] = (pred[0] + a) % Tag::COUNT;
                TieEvalRecord {
                    gold_domain: DomainLabel::from_index(a).unwrap(),
                    pred_domain: DomainLabel::from_index(b).unwrap(),
                    gold_slot: SlotLabel::Unk,
                    pred_slot: SlotLabel::Unk,
                    gold_tags: t,
                    pred_tags: pred,
                }
            })
            .collect();
        let sem = metrics::semantic_acc(&recs).unwrap();
        let sen = metrics::sen_sf_acc(&recs).unwrap();
        prop_assert!(sem <= sen);
        let f = metrics::sf_f1(&recs).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn bleu_bounded_and_exact_on_copies(words in prop::collection::vec("[a-z]{1,5}", 4..12)) {
        let s = words.join(" ");
        let b = metrics::bleu(std::slice::from_ref(&s), std::slice::from_ref(&s));
        prop_assert!((b - 1.0).abs() < 1e-12);
        let d = metrics::distinct_n(&[s], 1);
        prop_assert!(d > 0.0 && d <= 1.0);
    }
}
