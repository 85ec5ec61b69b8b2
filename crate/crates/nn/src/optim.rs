use crate::{Grads, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warm-up length in steps; 0 disables it.
    pub warmup: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, warmup: 2000, clip: Some(1.0) }
    }
}

/// Adam with linear warm-up and global-norm clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Learning rate applied at step `t` (1-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.cfg.warmup == 0 {
            self.cfg.lr
        } else {
            self.cfg.lr * (t as f64 / self.cfg.warmup as f64).min(1.0)
        }
    }

    /// Applies one update and returns the gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, grads: &mut Grads) -> f64 {
        let norm = grads.global_norm();
        if let Some(c) = self.cfg.clip {
            if norm > c {
                grads.scale(c / norm);
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let lr = self.lr_at(self.step);
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        for (id, g) in grads.iter() {
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            let p = store.get_mut(id);
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                p.data[i] -= lr * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + self.cfg.eps);
            }
        }
        norm
    }
}
