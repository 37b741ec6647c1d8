use serde::{Deserialize, Serialize};

use crate::compute::{Gradients, ParameterStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParameterStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn apply(&mut self, store: &mut ParameterStore, grads: &Gradients) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (id, g) in grads.iter() {
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
    }

    /// Moment tensors named `adam.m/<param>` and `adam.v/<param>`.
    pub fn state_tensors(&self, store: &ParameterStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.m.len());
        for (id, name, _) in store.iter() {
            out.push((format!("adam.m/{name}"), self.m[id.index()].clone()));
            out.push((format!("adam.v/{name}"), self.v[id.index()].clone()));
        }
        out
    }

    pub fn restore(
        config: AdamConfig,
        step: u64,
        store: &ParameterStore,
        lookup: impl Fn(&str) -> Option<Tensor>,
    ) -> Result<Self> {
        let mut adam = Adam::new(config, store);
        adam.step = step;
        for (id, name, t) in store.iter() {
            for (prefix, slot) in [("adam.m/", &mut adam.m), ("adam.v/", &mut adam.v)] {
                let key = format!("{prefix}{name}");
                let value = lookup(&key).ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
                if value.shape() != t.shape() {
                    return Err(Error::Checkpoint(format!("shape mismatch for {key}")));
                }
                slot[id.index()] = value;
            }
        }
        Ok(adam)
    }
}
