use std::collections::{HashMap, HashSet};

use crate::encoder::tokenizer::split_words;

fn ngram_counts(words: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 in `[0, 1]` with uniform weights and a brevity penalty.
/// Orders above unigrams with zero clipped matches use `(0 + 1) / (total + 1)`.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(candidates: &[S], references: &[R]) -> f64 {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut cand_len = 0;
    let mut ref_len = 0;
    for (c, r) in candidates.iter().zip(references) {
        let cw = split_words(c.as_ref());
        let rw = split_words(r.as_ref());
        cand_len += cw.len();
        ref_len += rw.len();
        for n in 1..=4 {
            let cc = ngram_counts(&cw, n);
            let rc = ngram_counts(&rw, n);
            totals[n - 1] += cw.len().saturating_sub(n - 1);
            matches[n - 1] += cc
                .iter()
                .map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    if cand_len == 0 || matches[0] == 0 {
        return 0.0;
    }
    let log_mean = (0..4)
        .map(|n| {
            let p = if n > 0 && matches[n] == 0 {
                1.0 / (totals[n] + 1) as f64
            } else {
                matches[n] as f64 / totals[n] as f64
            };
            p.ln()
        })
        .sum::<f64>()
        / 4.0;
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    bp * log_mean.exp()
}

/// Unique n-grams over all responses divided by total n-grams.
pub fn distinct_n<S: AsRef<str>>(responses: &[S], n: usize) -> f64 {
    let mut seen = HashSet::new();
    let mut total = 0usize;
    let tokenized: Vec<Vec<String>> = responses.iter().map(|r| split_words(r.as_ref())).collect();
    for w in &tokenized {
        if n == 0 || w.len() < n {
            continue;
        }
        for g in w.windows(n) {
            seen.insert(g);
            total += 1;
        }
    }
    if total == 0 {
        tracing::warn!(n, "no response long enough for distinct-n");
        return 0.0;
    }
    seen.len() as f64 / total as f64
}
