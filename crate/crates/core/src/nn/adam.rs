use std::collections::HashMap;

use super::{Mat, Module};

/// Adam with optional global-norm gradient clipping. Frozen parameters are skipped.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: Option<f64>,
    t: i32,
    moments: HashMap<String, (Mat, Mat)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(1.0),
            t: 0,
            moments: HashMap::new(),
        }
    }

    /// Apply one update to every module and clear their gradients. `scale`
    /// multiplies gradients first (e.g. `1 / batch`).
    pub fn step(&mut self, modules: &mut [(&str, &mut dyn Module)], scale: f64) {
        self.t += 1;
        let mut sq = 0.0;
        for (_, m) in modules.iter() {
            m.visit(&mut |_, p| {
                if !p.frozen {
                    sq += p.grad.iter().map(|g| g * g).sum::<f64>() * scale * scale;
                }
            });
        }
        let norm = sq.sqrt();
        let factor = match self.clip {
            Some(c) if norm > c => scale * c / norm,
            _ => scale,
        };
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t);
        let bc2 = 1.0 - b2.powi(self.t);
        let lr = self.lr;
        let eps = self.eps;
        for (prefix, m) in modules.iter_mut() {
            let moments = &mut self.moments;
            m.visit_mut(&mut |name, p| {
                if p.frozen {
                    p.zero_grad();
                    return;
                }
                let (mm, vv) = moments
                    .entry(format!("{prefix}/{name}"))
                    .or_insert_with(|| (Mat::zeros(p.value.raw_dim()), Mat::zeros(p.value.raw_dim())));
                ndarray::Zip::from(&mut p.value)
                    .and(&mut p.grad)
                    .and(mm)
                    .and(vv)
                    .for_each(|w, g, m1, v1| {
                        let gr = *g * factor;
                        *m1 = b1 * *m1 + (1.0 - b1) * gr;
                        *v1 = b2 * *v1 + (1.0 - b2) * gr * gr;
                        *w -= lr * (*m1 / bc1) / ((*v1 / bc2).sqrt() + eps);
                        *g = 0.0;
                    });
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Param};

    #[test]
    fn minimises_quadratic_and_respects_freeze() {
        let mut a = Linear::zeros(1, 1);
        let mut frozen = Linear::zeros(1, 1);
        frozen.w.frozen = true;
        frozen.b.frozen = true;
        frozen.w.grad.fill(5.0);
        let mut opt = Adam::new(0.1);
        for _ in 0..300 {
            // loss = (w - 3)^2
            let w = a.w.value[[0, 0]];
            a.w.grad[[0, 0]] = 2.0 * (w - 3.0);
            opt.step(&mut [("a", &mut a), ("f", &mut frozen)], 1.0);
        }
        assert!((a.w.value[[0, 0]] - 3.0).abs() < 1e-2);
        assert_eq!(frozen.w.value, Param::zeros(1, 1).value);
    }
}
