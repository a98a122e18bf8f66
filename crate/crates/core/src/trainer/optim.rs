use std::collections::BTreeMap;

use crate::backbone::{Group, ModelParams, ParamId};
use crate::ndcore::Tensor;

/// Learning rate and decoupled weight decay of one parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupHyper {
    pub lr: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub base: GroupHyper,
    pub adapter: GroupHyper,
    pub head: GroupHyper,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub ema_decay: f64,
    pub warmup_steps: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base: GroupHyper {
                lr: 1e-3,
                weight_decay: 0.0,
            },
            adapter: GroupHyper {
                lr: 1e-4,
                weight_decay: 0.0,
            },
            head: GroupHyper {
                lr: 5e-4,
                weight_decay: 1e-2,
            },
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 2.0,
            ema_decay: 0.9995,
            warmup_steps: 500,
        }
    }
}

impl OptimConfig {
    pub fn hyper(&self, g: Group) -> GroupHyper {
        match g {
            Group::Base => self.base,
            Group::Adapter => self.adapter,
            Group::Head => self.head,
        }
    }

    /// Linear warmup factor for the update that follows `completed` steps.
    pub fn warmup(&self, completed: u64) -> f64 {
        if self.warmup_steps == 0 {
            1.0
        } else {
            ((completed + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

/// Global ℓ2 norm of a gradient set.
pub fn global_norm(grads: &BTreeMap<ParamId, Vec<f64>>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scales every gradient by `clip / norm` when the global norm exceeds
/// `clip`. Returns the norm before clipping.
pub fn clip_global(grads: &mut BTreeMap<ParamId, Vec<f64>>, clip: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip {
        let s = clip / norm;
        for g in grads.values_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub step: u64,
    pub m: BTreeMap<ParamId, Vec<f64>>,
    pub v: BTreeMap<ParamId, Vec<f64>>,
}

impl AdamW {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update of every parameter that has a gradient. `lr_scale`
    /// multiplies each group's learning rate (warmup).
    pub fn update(
        &mut self,
        params: &mut ModelParams,
        grads: &BTreeMap<ParamId, Vec<f64>>,
        cfg: &OptimConfig,
        lr_scale: f64,
    ) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for (&id, g) in grads {
            let hyper = cfg.hyper(params.group(id));
            let lr = hyper.lr * lr_scale;
            let m = self.m.entry(id).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(id).or_insert_with(|| vec![0.0; g.len()]);
            let p = params.get(id);
            let mut next = p.values().to_vec();
            for i in 0..g.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                next[i] -= lr * (mhat / (vhat.sqrt() + cfg.eps) + hyper.weight_decay * next[i]);
            }
            params.set(id, p.with_values(next));
        }
    }
}

impl Default for AdamW {
    fn default() -> Self {
        Self::new()
    }
}

/// `ema ← decay·ema + (1 − decay)·p` for the parameters in `ids`.
pub fn ema_update(ema: &mut ModelParams, params: &ModelParams, ids: &[ParamId], decay: f64) {
    for &id in ids {
        let e = ema.get(id);
        let vals: Vec<f64> = e
            .values()
            .iter()
            .zip(params.get(id).values())
            .map(|(a, b)| decay * a + (1.0 - decay) * b)
            .collect();
        ema.set(id, Tensor::with_values(e, vals));
    }
}
