use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{
    dropout, gelu, gelu_backward, visit_child, visit_child_mut, Attention, AttentionCache, Embedding,
    LayerNorm, LayerNormCache, Linear, Mat, Module, Param, Rng64,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub causal: bool,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.vocab == 0 || self.max_len == 0 || self.layers == 0 {
            return Err(Error::Config("vocab, max_len and layers must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterVariant {
    Houlsby,
    Pfeiffer,
}

impl std::fmt::Display for AdapterVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AdapterVariant::Houlsby => "houlsby",
            AdapterVariant::Pfeiffer => "pfeiffer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    Gelu,
}

/// Bottleneck adapter: `a + up(act(down(LN(a))))`, `up` zero-initialised.
#[derive(Debug, Clone)]
pub struct Adapter {
    pub ln: LayerNorm,
    pub down: Linear,
    pub up: Linear,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct AdapterCache {
    ln: LayerNormCache,
    normed: Mat,
    pre: Mat,
    act: Mat,
}

impl Adapter {
    pub fn new(d: usize, bottleneck: usize, activation: Activation, rng: &mut Rng64) -> Self {
        Self {
            ln: LayerNorm::new(d),
            down: Linear::new(d, bottleneck, rng),
            up: Linear::zeros(bottleneck, d),
            activation,
        }
    }

    pub fn forward(&self, a: Mat) -> (Mat, AdapterCache) {
        let (normed, ln) = self.ln.forward(&a);
        let pre = self.down.forward(&normed);
        let act = match self.activation {
            Activation::Gelu => gelu(&pre),
            Activation::Relu => pre.mapv(|v| v.max(0.0)),
        };
        let out = a + self.up.forward(&act);
        (out, AdapterCache { ln, normed, pre, act })
    }

    pub fn backward(&mut self, cache: &AdapterCache, dy: &Mat) -> Mat {
        let dact = self.up.backward(&cache.act, dy);
        let dpre = match self.activation {
            Activation::Gelu => gelu_backward(&cache.pre, &dact),
            Activation::Relu => {
                let mut g = dact;
                g.zip_mut_with(&cache.pre, |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0
                    }
                });
                g
            }
        };
        let dnormed = self.down.backward(&cache.normed, &dpre);
        dy + &self.ln.backward(&cache.ln, &dnormed)
    }
}

impl Module for Adapter {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_child("ln", &self.ln, f);
        visit_child("down", &self.down, f);
        visit_child("up", &self.up, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child_mut("ln", &mut self.ln, f);
        visit_child_mut("down", &mut self.down, f);
        visit_child_mut("up", &mut self.up, f);
    }
}

#[derive(Debug, Clone)]
pub struct LayerAdapters {
    /// Present only for Houlsby.
    pub attn: Option<Adapter>,
    pub ffn: Adapter,
}

/// Adapters for every layer of a transformer, kept apart from the base weights.
#[derive(Debug, Clone)]
pub struct AdapterBank {
    pub variant: AdapterVariant,
    pub bottleneck: usize,
    pub activation: Activation,
    pub layers: Vec<LayerAdapters>,
}

impl AdapterBank {
    pub fn new(
        variant: AdapterVariant,
        layers: usize,
        d: usize,
        bottleneck: usize,
        activation: Activation,
        rng: &mut Rng64,
    ) -> Self {
        let layers = (0..layers)
            .map(|_| LayerAdapters {
                attn: (variant == AdapterVariant::Houlsby)
                    .then(|| Adapter::new(d, bottleneck, activation, rng)),
                ffn: Adapter::new(d, bottleneck, activation, rng),
            })
            .collect();
        Self {
            variant,
            bottleneck,
            activation,
            layers,
        }
    }
}

impl Module for AdapterBank {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(a) = &l.attn {
                visit_child(&format!("layers.{i}.attn"), a, f);
            }
            visit_child(&format!("layers.{i}.ffn"), &l.ffn, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            if let Some(a) = &mut l.attn {
                visit_child_mut(&format!("layers.{i}.attn"), a, f);
            }
            visit_child_mut(&format!("layers.{i}.ffn"), &mut l.ffn, f);
        }
    }
}

/// Pre-LN transformer layer.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    drop1: Option<Mat>,
    adapter1: Option<AdapterCache>,
    ln2: LayerNormCache,
    normed2: Mat,
    pre: Mat,
    act: Mat,
    drop2: Option<Mat>,
    adapter2: Option<AdapterCache>,
}

impl Block {
    pub fn new(d: usize, heads: usize, ffn_mult: usize, rng: &mut Rng64) -> Self {
        Self {
            ln1: LayerNorm::new(d),
            attn: Attention::new(d, heads, rng),
            ln2: LayerNorm::new(d),
            ff1: Linear::new(d, d * ffn_mult, rng),
            ff2: Linear::new(d * ffn_mult, d, rng),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        x: Mat,
        mask: &[bool],
        causal: bool,
        rate: f64,
        adapters: Option<&LayerAdapters>,
        mut rng: Option<&mut Rng64>,
    ) -> (Mat, BlockCache) {
        let (normed1, ln1) = self.ln1.forward(&x);
        let (a, attn) = self.attn.forward(&normed1, mask, causal);
        let (a, drop1) = dropout(a, rate, rng.as_deref_mut());
        let (a, adapter1) = match adapters.and_then(|l| l.attn.as_ref()) {
            Some(ad) => {
                let (a, c) = ad.forward(a);
                (a, Some(c))
            }
            None => (a, None),
        };
        let h1 = x + &a;
        let (normed2, ln2) = self.ln2.forward(&h1);
        let pre = self.ff1.forward(&normed2);
        let act = gelu(&pre);
        let f = self.ff2.forward(&act);
        let (f, drop2) = dropout(f, rate, rng);
        let (f, adapter2) = match adapters {
            Some(l) => {
                let (f, c) = l.ffn.forward(f);
                (f, Some(c))
            }
            None => (f, None),
        };
        let out = h1 + &f;
        (
            out,
            BlockCache {
                ln1,
                attn,
                drop1,
                adapter1,
                ln2,
                normed2,
                pre,
                act,
                drop2,
                adapter2,
            },
        )
    }

    fn backward(&mut self, cache: &BlockCache, dout: &Mat, adapters: Option<&mut LayerAdapters>) -> Mat {
        let (ad_attn, ad_ffn) = match adapters {
            Some(l) => (l.attn.as_mut(), Some(&mut l.ffn)),
            None => (None, None),
        };
        let mut df = dout.clone();
        if let (Some(ad), Some(c)) = (ad_ffn, &cache.adapter2) {
            df = ad.backward(c, &df);
        }
        if let Some(m) = &cache.drop2 {
            df *= m;
        }
        let dact = self.ff2.backward(&cache.act, &df);
        let dpre = gelu_backward(&cache.pre, &dact);
        let dn2 = self.ff1.backward(&cache.normed2, &dpre);
        let dh1 = dout + &self.ln2.backward(&cache.ln2, &dn2);

        let mut da = dh1.clone();
        if let (Some(ad), Some(c)) = (ad_attn, &cache.adapter1) {
            da = ad.backward(c, &da);
        }
        if let Some(m) = &cache.drop1 {
            da *= m;
        }
        let dn1 = self.attn.backward(&cache.attn, &da);
        dh1 + &self.ln1.backward(&cache.ln1, &dn1)
    }
}

impl Module for Block {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_child("ln1", &self.ln1, f);
        visit_child("attn", &self.attn, f);
        visit_child("ln2", &self.ln2, f);
        visit_child("ff1", &self.ff1, f);
        visit_child("ff2", &self.ff2, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child_mut("ln1", &mut self.ln1, f);
        visit_child_mut("attn", &mut self.attn, f);
        visit_child_mut("ln2", &mut self.ln2, f);
        visit_child_mut("ff1", &mut self.ff1, f);
        visit_child_mut("ff2", &mut self.ff2, f);
    }
}

/// Token embedding, fixed sinusoidal positions, a stack of blocks and a final LayerNorm.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub config: TransformerConfig,
    pub embedding: Embedding,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct TransformerCache {
    tokens: Vec<u32>,
    drop0: Option<Mat>,
    blocks: Vec<BlockCache>,
    ln_f: LayerNormCache,
}

pub fn sinusoidal(n: usize, d: usize) -> Mat {
    Mat::from_shape_fn((n, d), |(pos, i)| {
        let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl Transformer {
    pub fn new(config: TransformerConfig, rng: &mut Rng64) -> Result<Self> {
        config.validate()?;
        let embedding = Embedding::new(config.vocab, config.d_model, rng);
        let blocks = (0..config.layers)
            .map(|_| Block::new(config.d_model, config.heads, config.ffn_mult, rng))
            .collect();
        Ok(Self {
            config,
            embedding,
            blocks,
            ln_f: LayerNorm::new(config.d_model),
        })
    }

    /// Hidden states `N × d_model`. Dropout is active only when `rng` is given.
    pub fn forward(
        &self,
        tokens: &[u32],
        mask: &[bool],
        adapters: Option<&AdapterBank>,
        mut rng: Option<&mut Rng64>,
    ) -> Result<(Mat, TransformerCache)> {
        let n = tokens.len();
        if n > self.config.max_len {
            return Err(Error::TooLong {
                len: n,
                max: self.config.max_len,
            });
        }
        if mask.len() != n {
            return Err(Error::LengthMismatch(format!("{n} tokens, {} mask entries", mask.len())));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab) {
            return Err(Error::Config(format!("token id {t} outside vocabulary")));
        }
        let d = self.config.d_model;
        let x = self.embedding.forward(tokens) * (d as f64).sqrt() + sinusoidal(n, d);
        let (mut x, drop0) = dropout(x, self.config.dropout, rng.as_deref_mut());
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let ad = adapters.map(|a| &a.layers[i]);
            let (y, c) = b.forward(x, mask, self.config.causal, self.config.dropout, ad, rng.as_deref_mut());
            x = y;
            caches.push(c);
        }
        let (h, ln_f) = self.ln_f.forward(&x);
        Ok((
            h,
            TransformerCache {
                tokens: tokens.to_vec(),
                drop0,
                blocks: caches,
                ln_f,
            },
        ))
    }

    pub fn backward(&mut self, cache: &TransformerCache, dh: &Mat, mut adapters: Option<&mut AdapterBank>) {
        let mut dx = self.ln_f.backward(&cache.ln_f, dh);
        for (i, b) in self.blocks.iter_mut().enumerate().rev() {
            let ad = adapters.as_deref_mut().map(|a| &mut a.layers[i]);
            dx = b.backward(&cache.blocks[i], &dx, ad);
        }
        if let Some(m) = &cache.drop0 {
            dx *= m;
        }
        dx *= (self.config.d_model as f64).sqrt();
        self.embedding.backward(&cache.tokens, &dx);
    }

    /// Tied output projection: `h · Eᵀ`.
    pub fn logits(&self, h: &Mat) -> Mat {
        h.dot(&self.embedding.table.value.t())
    }

    /// Backward of [`Transformer::logits`]; returns the gradient w.r.t. `h`.
    pub fn logits_backward(&mut self, h: &Mat, dlogits: &Mat) -> Mat {
        if !self.embedding.table.frozen {
            self.embedding.table.grad += &dlogits.t().dot(h);
        }
        dlogits.dot(&self.embedding.table.value)
    }

    /// Row `i` of the hidden states only, for incremental use by callers.
    pub fn row(h: &Mat, i: usize) -> Mat {
        h.slice(s![i..i + 1, ..]).to_owned()
    }
}

impl Module for Transformer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_child("embedding", &self.embedding, f);
        for (i, b) in self.blocks.iter().enumerate() {
            visit_child(&format!("blocks.{i}"), b, f);
        }
        visit_child("ln_f", &self.ln_f, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child_mut("embedding", &mut self.embedding, f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            visit_child_mut(&format!("blocks.{i}"), b, f);
        }
        visit_child_mut("ln_f", &mut self.ln_f, f);
    }
}
