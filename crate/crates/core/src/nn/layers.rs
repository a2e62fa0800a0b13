use ndarray::{Axis, Zip};
use rand::Rng;

use super::{Mat, Module, Param, Rng64};

/// `y = x W + b` with `W: in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut Rng64) -> Self {
        let scale = 1.0 / (input as f64).sqrt();
        Self {
            w: Param::uniform(input, output, scale, rng),
            b: Param::zeros(1, output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Param::zeros(input, output),
            b: Param::zeros(1, output),
        }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        x.dot(&self.w.value) + &self.b.value
    }

    pub fn backward(&mut self, x: &Mat, dy: &Mat) -> Mat {
        if !self.w.frozen {
            self.w.grad += &x.t().dot(dy);
        }
        if !self.b.frozen {
            self.b.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        dy.dot(&self.w.value.t())
    }
}

impl Module for Linear {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("w", &self.w);
        f("b", &self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Param::filled(1, d, 1.0),
            beta: Param::zeros(1, d),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let y = &xhat * &self.gamma.value + &self.beta.value;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Mat) -> Mat {
        if !self.gamma.frozen {
            self.gamma.grad += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        if !self.beta.frozen {
            self.beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        let dxhat = dy * &self.gamma.value;
        let d = dy.ncols() as f64;
        let mut dx = Mat::zeros(dy.raw_dim());
        for (i, mut out) in dx.rows_mut().into_iter().enumerate() {
            let g = dxhat.row(i);
            let xh = cache.xhat.row(i);
            let sum_g = g.sum();
            let sum_gx = g.dot(&xh);
            let is = cache.inv_std[i];
            Zip::from(&mut out)
                .and(&g)
                .and(&xh)
                .for_each(|o, &gv, &xv| *o = is / d * (d * gv - sum_g - xv * sum_gx));
        }
        dx
    }
}

impl Module for LayerNorm {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("gamma", &self.gamma);
        f("beta", &self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("gamma", &mut self.gamma);
        f("beta", &mut self.beta);
    }
}

/// Token embedding table, `vocab × d`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Param,
}

impl Embedding {
    pub fn new(vocab: usize, d: usize, rng: &mut Rng64) -> Self {
        Self {
            table: Param::uniform(vocab, d, 1.0 / (d as f64).sqrt(), rng),
        }
    }

    pub fn forward(&self, tokens: &[u32]) -> Mat {
        let d = self.table.value.ncols();
        let mut out = Mat::zeros((tokens.len(), d));
        for (i, &t) in tokens.iter().enumerate() {
            out.row_mut(i).assign(&self.table.value.row(t as usize));
        }
        out
    }

    pub fn backward(&mut self, tokens: &[u32], dy: &Mat) {
        if self.table.frozen {
            return;
        }
        for (i, &t) in tokens.iter().enumerate() {
            let mut row = self.table.grad.row_mut(t as usize);
            row += &dy.row(i);
        }
    }
}

impl Module for Embedding {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("table", &self.table);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("table", &mut self.table);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Tanh-approximated GELU.
pub fn gelu(x: &Mat) -> Mat {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
}

pub fn gelu_backward(x: &Mat, dy: &Mat) -> Mat {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|g, &v| {
        let t = (GELU_C * (v + 0.044715 * v * v * v)).tanh();
        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
        *g *= 0.5 * (1.0 + t) + 0.5 * v * dt;
    });
    dx
}

/// Inverted dropout. Returns the output and the scale mask, or `None` when inactive.
pub fn dropout(x: Mat, rate: f64, rng: Option<&mut Rng64>) -> (Mat, Option<Mat>) {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let mask = Mat::from_shape_fn(x.raw_dim(), |_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            });
            (x * &mask, Some(mask))
        }
        _ => (x, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn num_grad(f: &dyn Fn(&Mat) -> f64, x: &Mat) -> Mat {
        let eps = 1e-5;
        let mut g = Mat::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut a = x.clone();
            a[[r, c]] += eps;
            let mut b = x.clone();
            b[[r, c]] -= eps;
            g[[r, c]] = (f(&a) - f(&b)) / (2.0 * eps);
        }
        g
    }

    fn close(a: &Mat, b: &Mat, tol: f64) {
        for (x, y) in a.iter().zip(b) {
            let denom = x.abs().max(y.abs()).max(1e-7);
            assert!((x - y).abs() / denom < tol || (x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn layer_norm_gradient() {
        let mut rng = Rng64::seed_from_u64(1);
        let x = Param::uniform(3, 6, 1.0, &mut rng).value;
        let w = Param::uniform(3, 6, 1.0, &mut rng).value;
        let mut ln = LayerNorm::new(6);
        ln.gamma = Param::uniform(1, 6, 1.0, &mut rng);
        let loss = |x: &Mat| (&ln.forward(x).0 * &w).sum();
        let numeric = num_grad(&loss, &x);
        let mut ln2 = ln.clone();
        let (_, cache) = ln2.forward(&x);
        let dx = ln2.backward(&cache, &w);
        close(&dx, &numeric, 1e-6);
    }

    #[test]
    fn gelu_gradient() {
        let mut rng = Rng64::seed_from_u64(2);
        let x = Param::uniform(2, 5, 3.0, &mut rng).value;
        let numeric = num_grad(&|x| gelu(x).sum(), &x);
        close(&gelu_backward(&x, &Mat::ones(x.raw_dim())), &numeric, 1e-6);
    }

    #[test]
    fn linear_gradient() {
        let mut rng = Rng64::seed_from_u64(3);
        let x = Param::uniform(4, 3, 1.0, &mut rng).value;
        let mut lin = Linear::new(3, 2, &mut rng);
        let numeric = num_grad(&|x| lin.forward(x).mapv(|v| v * v).sum(), &x);
        let y = lin.forward(&x);
        let dx = lin.backward(&x, &(y * 2.0));
        close(&dx, &numeric, 1e-6);
    }

    #[test]
    fn dropout_inactive_is_identity() {
        let x = Mat::ones((2, 3));
        let (y, m) = dropout(x.clone(), 0.1, None);
        assert_eq!(y, x);
        assert!(m.is_none());
    }
}
