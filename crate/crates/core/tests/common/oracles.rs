//! Brute-force reference implementations, written independently of the library.
#![allow(dead_code)]

use proactive_switch::corpus::LabelDictionary;

/// Chunks as (type, start, end_exclusive), scanning label strings.
pub fn chunks(tags: &[usize]) -> Vec<(String, usize, usize)> {
    let dict = LabelDictionary::default();
    let labels: Vec<String> = tags.iter().map(|&t| dict.from_index(t).unwrap().to_string()).collect();
    let kind = |l: &str| -> Option<(char, String)> {
        if l.len() > 2 && (l.starts_with("B-") || l.starts_with("I-")) {
            Some((l.chars().next().unwrap(), l[2..].to_string()))
        } else {
            None
        }
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        match kind(&labels[i]) {
            Some((_, ty)) => {
                let mut j = i + 1;
                while j < labels.len() && labels[j] == format!("I-{ty}") {
                    j += 1;
                }
                out.push((ty, i, j));
                i = j;
            }
            None => i += 1,
        }
    }
    out
}

pub fn sf_f1(golds: &[Vec<usize>], preds: &[Vec<usize>]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (g, p) in golds.iter().zip(preds) {
        let gc = chunks(g);
        let pc = chunks(p);
        for c in &pc {
            if gc.contains(c) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        fn_ += gc.iter().filter(|c| !pc.contains(c)).count();
    }
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

pub fn fraction<T>(items: &[T], ok: impl Fn(&T) -> bool) -> f64 {
    items.iter().filter(|x| ok(x)).count() as f64 / items.len() as f64
}

/// Support-weighted F1 from an explicit confusion matrix.
pub fn weighted_f1(golds: &[usize], preds: &[usize], classes: usize) -> (f64, f64) {
    let mut cm = vec![vec![0usize; classes]; classes];
    for (&g, &p) in golds.iter().zip(preds) {
        cm[g][p] += 1;
    }
    let total = golds.len() as f64;
    let correct: usize = (0..classes).map(|c| cm[c][c]).sum();
    let mut wf = 0.0;
    for c in 0..classes {
        let support: usize = cm[c].iter().sum();
        let predicted: usize = (0..classes).map(|r| cm[r][c]).sum();
        let tp = cm[c][c] as f64;
        let prec = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let rec = if support == 0 { 0.0 } else { tp / support as f64 };
        let f1 = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
        wf += f1 * support as f64 / total;
    }
    (correct as f64 / total, wf)
}

pub fn words(s: &str) -> Vec<String> {
    proactive_switch::encoder::tokenizer::split_words(s)
}

pub fn distinct(responses: &[String], n: usize) -> f64 {
    let mut all: Vec<Vec<String>> = Vec::new();
    for r in responses {
        let w = words(r);
        if w.len() >= n {
            for i in 0..=w.len() - n {
                all.push(w[i..i + n].to_vec());
            }
        }
    }
    if all.is_empty() {
        return 0.0;
    }
    let mut uniq: Vec<Vec<String>> = Vec::new();
    for g in &all {
        if !uniq.contains(g) {
            uniq.push(g.clone());
        }
    }
    uniq.len() as f64 / all.len() as f64
}

fn ngrams(w: &[String], n: usize) -> Vec<Vec<String>> {
    if w.len() < n {
        return vec![];
    }
    (0..=w.len() - n).map(|i| w[i..i + n].to_vec()).collect()
}

/// Corpus BLEU-4, clipped counts by linear scans, add-one on zero-match orders above 1.
pub fn bleu(cands: &[String], refs: &[String]) -> f64 {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in cands.iter().zip(refs) {
        let cw = words(c);
        let rw = words(r);
        c_len += cw.len();
        r_len += rw.len();
        for n in 1..=4 {
            let cg = ngrams(&cw, n);
            let rg = ngrams(&rw, n);
            totals[n - 1] += cg.len();
            let mut seen: Vec<&Vec<String>> = Vec::new();
            for g in &cg {
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                let in_c = cg.iter().filter(|x| *x == g).count();
                let in_r = rg.iter().filter(|x| *x == g).count();
                matches[n - 1] += in_c.min(in_r);
            }
        }
    }
    if c_len == 0 || matches[0] == 0 {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        let p = if matches[n] == 0 && n > 0 {
            1.0 / (totals[n] as f64 + 1.0)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_p += p.ln() / 4.0;
    }
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len as f64 / c_len as f64).exp() };
    bp * log_p.exp()
}
