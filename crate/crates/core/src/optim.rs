//! Decoupled-weight-decay adaptive-moment optimizer with linear warmup
//! and cosine decay.

use std::collections::HashMap;

use crate::params::ParamStore;
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.5;
pub const BETA2: f64 = 0.9;
pub const WEIGHT_DECAY: f64 = 0.01;
pub const ADAM_EPS: f64 = 1e-8;

pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    /// completed update count; moments are bias-corrected with it
    pub t: usize,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, total_steps: usize) -> AdamW {
        AdamW {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
            weight_decay: WEIGHT_DECAY,
            warmup_steps: (total_steps / 100).max(1),
            total_steps,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Learning rate for 1-based step: linear ramp over the warmup,
    /// then cosine decay to zero at `total_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let step = step.min(self.total_steps);
        if step <= self.warmup_steps {
            return self.lr * step as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let pos = (step - self.warmup_steps) as f64 / span;
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * pos).cos())
    }

    /// One update over every parameter with a gradient. Parameters whose
    /// gradient is None (unreached in this pass) are left untouched and
    /// their moments are not advanced.
    pub fn step<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &HashMap<String, Option<Vec<T>>>,
    ) {
        self.t += 1;
        let lr_t = self.lr_at(self.t);
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, data) in store.iter_mut() {
            let Some(Some(g)) = grads.get(name) else { continue };
            assert_eq!(g.len(), data.len(), "gradient length mismatch for {name}");
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                let gi = g[i].to_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                let p = data[i].to_f64();
                let upd = mh / (vh.sqrt() + self.eps) + self.weight_decay * p;
                data[i] = T::from_f64(p - lr_t * upd);
            }
        }
    }
}
