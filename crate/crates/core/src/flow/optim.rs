use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW with decoupled weight decay and bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros = |s: &ParamStore| {
            s.iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    /// Applies accumulated gradients (scaled by `grad_scale`) and clears them.
    /// Parameters without a gradient are still decayed.
    pub fn update(&mut self, store: &mut ParamStore, grad_scale: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Mismatch(format!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let t = store.get_mut(id);
            let grad = t.grad().map(|g| g.to_vec());
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = t.data_mut();
            for k in 0..p.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[k] * grad_scale);
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= c.lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * p[k]);
            }
            t.zero_grad();
        }
        Ok(())
    }
}
