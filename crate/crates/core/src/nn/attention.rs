use ndarray::s;

use super::{visit_child, visit_child_mut, Linear, Mat, Module, Param, Rng64};

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone)]
pub struct Attention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    concat: Mat,
}

impl Attention {
    pub fn new(d: usize, heads: usize, rng: &mut Rng64) -> Self {
        Self {
            heads,
            q: Linear::new(d, d, rng),
            k: Linear::new(d, d, rng),
            v: Linear::new(d, d, rng),
            o: Linear::new(d, d, rng),
        }
    }

    /// Keys with `key_mask[j] == false` receive probability exactly zero; with `causal`
    /// position `i` only attends to `j <= i`.
    pub fn forward(&self, x: &Mat, key_mask: &[bool], causal: bool) -> (Mat, AttentionCache) {
        let n = x.nrows();
        let d = x.ncols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.q.forward(x);
        let k = self.k.forward(x);
        let v = self.v.forward(x);
        let mut concat = Mat::zeros((n, d));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            let mut p = Mat::zeros((n, n));
            for i in 0..n {
                let allowed = |j: usize| key_mask[j] && (!causal || j <= i);
                let mut m = f64::NEG_INFINITY;
                for j in (0..n).filter(|&j| allowed(j)) {
                    m = m.max(scores[[i, j]]);
                }
                if m == f64::NEG_INFINITY {
                    continue;
                }
                let mut total = 0.0;
                for j in (0..n).filter(|&j| allowed(j)) {
                    let e = (scores[[i, j]] - m).exp();
                    p[[i, j]] = e;
                    total += e;
                }
                for j in (0..n).filter(|&j| allowed(j)) {
                    p[[i, j]] /= total;
                }
            }
            concat.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let out = self.o.forward(&concat);
        (
            out,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                concat,
            },
        )
    }

    pub fn backward(&mut self, cache: &AttentionCache, dy: &Mat) -> Mat {
        let d = cache.x.ncols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dconcat = self.o.backward(&cache.concat, dy);
        let mut dq = Mat::zeros(cache.q.raw_dim());
        let mut dk = Mat::zeros(cache.k.raw_dim());
        let mut dv = Mat::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dout = dconcat.slice(cols);
            dv.slice_mut(cols).assign(&p.t().dot(&dout));
            let dp = dout.dot(&cache.v.slice(cols).t());
            let mut ds = &dp * p;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let inner: f64 = row.sum();
                row.zip_mut_with(&prow, |g, &pv| *g -= pv * inner);
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let mut dx = self.q.backward(&cache.x, &dq);
        dx += &self.k.backward(&cache.x, &dk);
        dx += &self.v.backward(&cache.x, &dv);
        dx
    }
}

impl Module for Attention {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_child("q", &self.q, f);
        visit_child("k", &self.k, f);
        visit_child("v", &self.v, f);
        visit_child("o", &self.o, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child_mut("q", &mut self.q, f);
        visit_child_mut("k", &mut self.k, f);
        visit_child_mut("v", &mut self.v, f);
        visit_child_mut("o", &mut self.o, f);
    }
}
