//! Linear-chain CRF over tag sequences: forward algorithm, gold-path NLL with
//! analytic gradients, and Viterbi decoding.

use crate::corpus::Tag;
use crate::error::{Error, Result};
use crate::nn::{log_sum_exp, Mat, Module, Param};

/// Score pinned on structurally banned transitions.
pub const BANNED: f64 = -1e4;

#[derive(Debug, Clone)]
pub struct Crf {
    /// `transitions[i][j]`: score of label `j` following label `i`.
    pub transitions: Param,
    pub start: Param,
    pub end: Param,
    banned_trans: Vec<bool>,
    banned_start: Vec<bool>,
}

impl Crf {
    /// Unconstrained CRF with all scores zero.
    pub fn new(labels: usize) -> Self {
        Self {
            transitions: Param::zeros(labels, labels),
            start: Param::zeros(1, labels),
            end: Param::zeros(1, labels),
            banned_trans: vec![false; labels * labels],
            banned_start: vec![false; labels],
        }
    }

    /// CRF over the slot-filling tags with IOB structure enforced: `I-x` may only
    /// follow `B-x` or `I-x`, and never starts a sequence.
    pub fn iob() -> Self {
        let n = Tag::COUNT;
        let mut crf = Self::new(n);
        for j in 0..n {
            if let Some(Tag::Inside(p)) = Tag::from_index(j) {
                crf.banned_start[j] = true;
                for i in 0..n {
                    let ok = matches!(Tag::from_index(i), Some(Tag::Begin(q) | Tag::Inside(q)) if q == p);
                    crf.banned_trans[i * n + j] = !ok;
                }
            }
        }
        crf.pin();
        crf
    }

    pub fn labels(&self) -> usize {
        self.start.value.ncols()
    }

    pub fn is_banned(&self, from: usize, to: usize) -> bool {
        self.banned_trans[from * self.labels() + to]
    }

    pub fn is_banned_start(&self, label: usize) -> bool {
        self.banned_start[label]
    }

    /// Restore banned entries to [`BANNED`] and clear their gradients.
    pub fn pin(&mut self) {
        let n = self.labels();
        for i in 0..n {
            for j in 0..n {
                if self.banned_trans[i * n + j] {
                    self.transitions.value[[i, j]] = BANNED;
                    self.transitions.grad[[i, j]] = 0.0;
                }
            }
            if self.banned_start[i] {
                self.start.value[[0, i]] = BANNED;
                self.start.grad[[0, i]] = 0.0;
            }
        }
    }

    fn active(mask: &[bool]) -> Result<Vec<usize>> {
        let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if rows.is_empty() {
            return Err(Error::AllMasked);
        }
        Ok(rows)
    }

    fn alphas(&self, em: &Mat, rows: &[usize]) -> Vec<Vec<f64>> {
        let n = self.labels();
        let t = &self.transitions.value;
        let mut alphas = Vec::with_capacity(rows.len());
        alphas.push((0..n).map(|j| self.start.value[[0, j]] + em[[rows[0], j]]).collect::<Vec<_>>());
        let mut buf = vec![0.0; n];
        for &r in &rows[1..] {
            let prev = alphas.last().expect("non-empty");
            let next = (0..n)
                .map(|j| {
                    for i in 0..n {
                        buf[i] = prev[i] + t[[i, j]];
                    }
                    log_sum_exp(&buf) + em[[r, j]]
                })
                .collect();
            alphas.push(next);
        }
        alphas
    }

    /// `log Z` by the forward algorithm over unmasked positions.
    pub fn log_partition(&self, em: &Mat, mask: &[bool]) -> Result<f64> {
        let rows = Self::active(mask)?;
        let alphas = self.alphas(em, &rows);
        let last = alphas.last().expect("non-empty");
        let fin: Vec<f64> = (0..self.labels()).map(|j| last[j] + self.end.value[[0, j]]).collect();
        Ok(log_sum_exp(&fin))
    }

    /// Unnormalised score of `path` (one label per unmasked position), summed left to right.
    pub fn score(&self, em: &Mat, mask: &[bool], path: &[usize]) -> Result<f64> {
        let rows = Self::active(mask)?;
        if path.len() != rows.len() {
            return Err(Error::LengthMismatch(format!(
                "{} labels for {} unmasked positions",
                path.len(),
                rows.len()
            )));
        }
        let mut s = self.start.value[[0, path[0]]] + em[[rows[0], path[0]]];
        for k in 1..rows.len() {
            s = s + self.transitions.value[[path[k - 1], path[k]]] + em[[rows[k], path[k]]];
        }
        Ok(s + self.end.value[[0, path[rows.len() - 1]]])
    }

    fn check_gold(&self, gold: &[usize]) -> Result<()> {
        let name = |i: usize| {
            if self.labels() == Tag::COUNT {
                Tag::from_index(i).map(Tag::label).unwrap_or_else(|| i.to_string())
            } else {
                i.to_string()
            }
        };
        if self.banned_start[gold[0]] {
            return Err(Error::BannedTransition {
                from: "<start>".into(),
                to: name(gold[0]),
            });
        }
        for w in gold.windows(2) {
            if self.is_banned(w[0], w[1]) {
                return Err(Error::BannedTransition {
                    from: name(w[0]),
                    to: name(w[1]),
                });
            }
        }
        Ok(())
    }

    /// Unmasked entries of a full-length tag sequence.
    fn gold_path(mask: &[bool], gold: &[usize]) -> Result<Vec<usize>> {
        if gold.len() != mask.len() {
            return Err(Error::LengthMismatch(format!("{} tags for {} positions", gold.len(), mask.len())));
        }
        Ok(gold.iter().zip(mask).filter(|(_, &m)| m).map(|(&g, _)| g).collect())
    }

    /// `log Z − score(gold)`; `gold` is aligned with `mask` (masked entries ignored).
    pub fn nll(&self, em: &Mat, mask: &[bool], gold: &[usize]) -> Result<f64> {
        let path = Self::gold_path(mask, gold)?;
        Self::active(mask)?;
        self.check_gold(&path)?;
        Ok((self.log_partition(em, mask)? - self.score(em, mask, &path)?).max(0.0))
    }

    /// NLL plus its gradient w.r.t. emissions (returned, zero on masked rows); CRF
    /// parameter gradients accumulate into `self`, scaled by `weight`.
    pub fn nll_backward(&mut self, em: &Mat, mask: &[bool], gold: &[usize], weight: f64) -> Result<(f64, Mat)> {
        let path = Self::gold_path(mask, gold)?;
        let rows = Self::active(mask)?;
        self.check_gold(&path)?;
        let n = self.labels();
        let len = rows.len();
        let t = self.transitions.value.clone();
        let alphas = self.alphas(em, &rows);
        let mut betas = vec![vec![0.0; n]; len];
        betas[len - 1] = (0..n).map(|j| self.end.value[[0, j]]).collect();
        let mut buf = vec![0.0; n];
        for k in (0..len - 1).rev() {
            let r = rows[k + 1];
            for i in 0..n {
                for j in 0..n {
                    buf[j] = t[[i, j]] + em[[r, j]] + betas[k + 1][j];
                }
                betas[k][i] = log_sum_exp(&buf);
            }
        }
        let fin: Vec<f64> = (0..n).map(|j| alphas[len - 1][j] + self.end.value[[0, j]]).collect();
        let log_z = log_sum_exp(&fin);
        let nll = (log_z - self.score(em, mask, &path)?).max(0.0);

        let mut d_em = Mat::zeros(em.raw_dim());
        for k in 0..len {
            for j in 0..n {
                d_em[[rows[k], j]] = (alphas[k][j] + betas[k][j] - log_z).exp();
            }
            d_em[[rows[k], path[k]]] -= 1.0;
        }
        let mut d_t = Mat::zeros((n, n));
        for k in 1..len {
            let r = rows[k];
            for i in 0..n {
                for j in 0..n {
                    d_t[[i, j]] += (alphas[k - 1][i] + t[[i, j]] + em[[r, j]] + betas[k][j] - log_z).exp();
                }
            }
            d_t[[path[k - 1], path[k]]] -= 1.0;
        }
        if !self.transitions.frozen {
            self.transitions.grad.scaled_add(weight, &d_t);
        }
        if !self.start.frozen {
            for j in 0..n {
                self.start.grad[[0, j]] += weight * d_em[[rows[0], j]];
            }
        }
        if !self.end.frozen {
            for j in 0..n {
                self.end.grad[[0, j]] += weight * d_em[[rows[len - 1], j]];
            }
        }
        for i in 0..n {
            for j in 0..n {
                if self.banned_trans[i * n + j] {
                    self.transitions.grad[[i, j]] = 0.0;
                }
            }
            if self.banned_start[i] {
                self.start.grad[[0, i]] = 0.0;
            }
        }
        Ok((nll, d_em))
    }

    /// Maximum-score path over unmasked positions and its score. Ties prefer the
    /// smaller label index. Masked positions are filled with label 0.
    pub fn viterbi(&self, em: &Mat, mask: &[bool]) -> Result<(Vec<usize>, f64)> {
        let rows = Self::active(mask)?;
        let n = self.labels();
        let t = &self.transitions.value;
        let mut delta: Vec<f64> = (0..n).map(|j| self.start.value[[0, j]] + em[[rows[0], j]]).collect();
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(rows.len());
        for &r in &rows[1..] {
            let mut next = vec![0.0; n];
            let mut bp = vec![0; n];
            for j in 0..n {
                let mut best = 0;
                let mut best_v = delta[0] + t[[0, j]];
                for i in 1..n {
                    let v = delta[i] + t[[i, j]];
                    if v > best_v {
                        best = i;
                        best_v = v;
                    }
                }
                next[j] = best_v + em[[r, j]];
                bp[j] = best;
            }
            delta = next;
            back.push(bp);
        }
        let mut last = 0;
        let mut best = delta[0] + self.end.value[[0, 0]];
        for (j, d) in delta.iter().enumerate().skip(1) {
            let v = d + self.end.value[[0, j]];
            if v > best {
                best = v;
                last = j;
            }
        }
        let mut path = vec![last; rows.len()];
        for k in (1..rows.len()).rev() {
            path[k - 1] = back[k - 1][path[k]];
        }
        let mut full = vec![0; mask.len()];
        for (k, &r) in rows.iter().enumerate() {
            full[r] = path[k];
        }
        Ok((full, best))
    }
}

impl Module for Crf {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("transitions", &self.transitions);
        f("start", &self.start);
        f("end", &self.end);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("transitions", &mut self.transitions);
        f("start", &mut self.start);
        f("end", &mut self.end);
    }
}
