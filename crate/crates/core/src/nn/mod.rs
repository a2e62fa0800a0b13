//! Minimal f64 neural-network toolkit with hand-written backward passes.
//!
//! Every layer exposes `forward` returning its output plus a cache and `backward`
//! consuming that cache; gradients accumulate into [`Param::grad`].

mod adam;
mod attention;
mod layers;
mod transformer;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use adam::Adam;
pub use attention::{Attention, AttentionCache};
pub use layers::{dropout, gelu, gelu_backward, Embedding, LayerNorm, LayerNormCache, Linear};
pub use transformer::{
    sinusoidal, Activation, Adapter, AdapterBank, AdapterVariant, Block, LayerAdapters, Transformer, TransformerCache,
    TransformerConfig,
};

pub type Mat = Array2<f64>;
pub type Rng64 = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Mat,
    pub grad: Mat,
    pub frozen: bool,
}

impl Param {
    pub fn new(value: Mat) -> Self {
        let grad = Mat::zeros(value.raw_dim());
        Self {
            value,
            grad,
            frozen: false,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Mat::zeros((rows, cols)))
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self::new(Mat::from_elem((rows, cols), v))
    }

    /// Uniform in `[-scale, scale)`.
    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut Rng64) -> Self {
        Self::new(Mat::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale)))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Named parameter traversal; names are dotted paths.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p| n += p.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |_, p| p.zero_grad());
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.visit_mut(&mut |_, p| p.frozen = frozen);
    }
}

pub(crate) fn visit_child<M: Module + ?Sized>(prefix: &str, m: &M, f: &mut dyn FnMut(&str, &Param)) {
    m.visit(&mut |n, p| f(&format!("{prefix}.{n}"), p));
}

pub(crate) fn visit_child_mut<M: Module + ?Sized>(
    prefix: &str,
    m: &mut M,
    f: &mut dyn FnMut(&str, &mut Param),
) {
    m.visit_mut(&mut |n, p| f(&format!("{prefix}.{n}"), p));
}

/// Numerically stable softmax over a slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Cross-entropy of `softmax(logits)` against `gold`, with gradient w.r.t. logits.
pub fn cross_entropy(logits: &[f64], gold: usize) -> (f64, Vec<f64>) {
    let mut p = softmax(logits);
    let loss = log_sum_exp(logits) - logits[gold];
    p[gold] -= 1.0;
    (loss, p)
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
