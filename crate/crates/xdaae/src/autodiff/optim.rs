//! Adaptive-moment optimizer with per-parameter state.

use super::params::ParamStore;
use crate::error::{Error, Result};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot {
    pub t: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    slots: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, slots: BTreeMap::new() }
    }

    /// Apply one update to each named parameter. Every name must have a
    /// gradient in `grads` (zero-filled gradients count; absent ones do not).
    pub fn step<'a>(
        &mut self,
        store: &mut ParamStore<f32>,
        grads: &BTreeMap<String, Vec<f32>>,
        names: impl IntoIterator<Item = &'a str>,
    ) -> Result<()> {
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        for name in names {
            let grad = grads.get(name).ok_or_else(|| Error::MissingGrad(name.to_string()))?;
            let entry = store.param_mut(name)?;
            if grad.len() != entry.values.len() {
                return Err(Error::shape("optimizer_step", format!("grad len {} vs param len {} for {}", grad.len(), entry.values.len(), name)));
            }
            let slot = self.slots.entry(name.to_string()).or_insert_with(|| AdamSlot {
                t: 0,
                m: vec![0.0; grad.len()],
                v: vec![0.0; grad.len()],
            });
            slot.t += 1;
            let bc1 = 1.0 - beta1.powi(slot.t as i32);
            let bc2 = 1.0 - beta2.powi(slot.t as i32);
            for i in 0..grad.len() {
                let g = grad[i];
                slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
                slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                entry.values[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn slots_iter(&self) -> impl Iterator<Item = (&str, &AdamSlot)> {
        self.slots.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn restore_slot(&mut self, name: String, slot: AdamSlot) {
        self.slots.insert(name, slot);
    }
}
