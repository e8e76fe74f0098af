//! Parameter storage and optimizers.
//!
//! Parameters live in a `ParamStore`; graphs reference them by `ParamId` and
//! deposit gradients back into the store. `ParamGroup`s partition the store
//! into named sets sharing the layer-adaptation exclusion flag (biases and
//! any normalization parameters are conventionally excluded).

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<F: Real> {
    pub name: String,
    pub lars_excluded: bool,
    pub tensor: Tensor<F>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<F: Real = f32> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, lars_excluded: bool, tensor: Tensor<F>) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            lars_excluded,
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry<F> {
        &mut self.entries[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<F>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.clear_grad();
        }
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// FNV-1a digest over parameter values; used to assert that frozen
    /// encoders stay untouched.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for e in &self.entries {
            for v in e.tensor.data() {
                for byte in v.to_f64().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    lars_excluded: e.lars_excluded,
                    tensor: e.tensor.cast(),
                })
                .collect(),
        }
    }

    /// Nudge one scalar entry; used by finite-difference oracles.
    pub fn nudge(&mut self, id: ParamId, index: usize, delta: F) {
        self.entries[id.0].tensor.data_mut()[index] += delta;
    }
}

/// Named set of parameters sharing the layer-adaptation exclusion flag.
#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub name: String,
    pub ids: Vec<ParamId>,
    pub lars_excluded: bool,
}

/// Check that groups form a partition of the store.
pub fn validate_groups<F: Real>(store: &ParamStore<F>, groups: &[ParamGroup]) -> Result<()> {
    let mut seen = vec![false; store.len()];
    for g in groups {
        for id in &g.ids {
            if id.0 >= seen.len() {
                return Err(Error::config(format!(
                    "group {}: parameter index {} out of range",
                    g.name, id.0
                )));
            }
            if seen[id.0] {
                return Err(Error::config(format!(
                    "parameter {} appears in more than one group",
                    store.get(*id).name
                )));
            }
            seen[id.0] = true;
        }
    }
    if let Some(miss) = seen.iter().position(|s| !s) {
        return Err(Error::config(format!(
            "parameter {} belongs to no group",
            store.get(ParamId(miss)).name
        )));
    }
    Ok(())
}

/// Upper bound on the layer trust ratio. When gradients vanish the raw
/// ratio degenerates toward `1/weight_decay` and a single step can scale a
/// whole layer by orders of magnitude; the cap keeps such steps bounded
/// while leaving ordinary ratios (order 1-10) untouched.
pub const MAX_TRUST_RATIO: f64 = 20.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LarsConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub eps: f64,
}

impl Default for LarsConfig {
    fn default() -> Self {
        LarsConfig {
            base_lr: 0.1,
            weight_decay: 1e-5,
            momentum: 0.9,
            eps: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: kind, hyperparameters, step counter, and per-tensor
/// moment buffers matching the parameter shapes.
#[derive(Debug, Clone)]
pub enum OptState<F: Real = f32> {
    Lars {
        cfg: LarsConfig,
        velocity: Vec<Vec<F>>,
        step_count: u64,
    },
    Adam {
        cfg: AdamConfig,
        m: Vec<Vec<F>>,
        v: Vec<Vec<F>>,
        step_count: u64,
    },
}

impl<F: Real> OptState<F> {
    pub fn lars(cfg: LarsConfig, store: &ParamStore<F>) -> Self {
        let velocity = store
            .iter()
            .map(|(_, e)| vec![F::ZERO; e.tensor.numel()])
            .collect();
        OptState::Lars {
            cfg,
            velocity,
            step_count: 0,
        }
    }

    pub fn adam(cfg: AdamConfig, store: &ParamStore<F>) -> Self {
        let zeros: Vec<Vec<F>> = store
            .iter()
            .map(|(_, e)| vec![F::ZERO; e.tensor.numel()])
            .collect();
        OptState::Adam {
            cfg,
            m: zeros.clone(),
            v: zeros,
            step_count: 0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            OptState::Lars { .. } => "lars-sgd",
            OptState::Adam { .. } => "adam",
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            OptState::Lars { step_count, .. } | OptState::Adam { step_count, .. } => *step_count,
        }
    }

    /// Apply one update from the gradients currently in the store, then
    /// clear them.
    pub fn step(&mut self, store: &mut ParamStore<F>, groups: &[ParamGroup]) -> Result<()> {
        for g in groups {
            for &id in &g.ids {
                if store.get(id).tensor.grad().is_none() {
                    return Err(Error::state(format!(
                        "optimizer step without gradients for {}",
                        store.get(id).name
                    )));
                }
            }
        }
        match self {
            OptState::Lars {
                cfg,
                velocity,
                step_count,
            } => {
                *step_count += 1;
                for g in groups {
                    for &id in &g.ids {
                        let entry = store.get_mut(id);
                        let n = entry.tensor.numel();
                        let excluded = g.lars_excluded;
                        let (wnorm, gnorm) = {
                            let w = entry.tensor.data();
                            let gr = entry.tensor.grad().unwrap();
                            (l2_norm(w), l2_norm(gr))
                        };
                        // Layer-wise trust ratio; excluded groups and
                        // zero-norm tensors fall back to plain scaling.
                        let ratio = if excluded || wnorm == 0.0 {
                            1.0
                        } else {
                            (wnorm / (gnorm + cfg.weight_decay * wnorm + cfg.eps))
                                .min(MAX_TRUST_RATIO)
                        };
                        let lr = F::from_f64(cfg.base_lr * ratio);
                        let mu = F::from_f64(cfg.momentum);
                        let wd = F::from_f64(cfg.weight_decay);
                        let vel = &mut velocity[id.index()];
                        debug_assert_eq!(vel.len(), n);
                        // Split borrows: copy grad out (small tensors).
                        let grad: Vec<F> = entry.tensor.grad().unwrap().to_vec();
                        let w = entry.tensor.data_mut();
                        for i in 0..n {
                            let upd = grad[i] + wd * w[i];
                            vel[i] = mu * vel[i] + upd;
                            w[i] -= lr * vel[i];
                        }
                    }
                }
            }
            OptState::Adam {
                cfg,
                m,
                v,
                step_count,
            } => {
                *step_count += 1;
                let t = *step_count as f64;
                let bc1 = 1.0 - cfg.beta1.powi(t as i32);
                let bc2 = 1.0 - cfg.beta2.powi(t as i32);
                let b1 = F::from_f64(cfg.beta1);
                let b2 = F::from_f64(cfg.beta2);
                let ob1 = F::from_f64(1.0 - cfg.beta1);
                let ob2 = F::from_f64(1.0 - cfg.beta2);
                let lr = F::from_f64(cfg.lr);
                let eps = F::from_f64(cfg.eps);
                let wd = F::from_f64(cfg.weight_decay);
                let ibc1 = F::from_f64(1.0 / bc1);
                let ibc2 = F::from_f64(1.0 / bc2);
                for g in groups {
                    for &id in &g.ids {
                        let entry = store.get_mut(id);
                        let n = entry.tensor.numel();
                        let grad: Vec<F> = entry.tensor.grad().unwrap().to_vec();
                        let mbuf = &mut m[id.index()];
                        let vbuf = &mut v[id.index()];
                        let w = entry.tensor.data_mut();
                        for i in 0..n {
                            // Classic L2: decay folded into the gradient.
                            let gi = grad[i] + wd * w[i];
                            mbuf[i] = b1 * mbuf[i] + ob1 * gi;
                            vbuf[i] = b2 * vbuf[i] + ob2 * gi * gi;
                            let mhat = mbuf[i] * ibc1;
                            let vhat = vbuf[i] * ibc2;
                            w[i] -= lr * mhat / (vhat.sqrt() + eps);
                        }
                    }
                }
            }
        }
        store.zero_grads();
        Ok(())
    }

    /// Flatten moment buffers for checkpointing (velocity for momentum SGD;
    /// first then second moments for Adam).
    pub fn buffers(&self) -> Vec<&[F]> {
        match self {
            OptState::Lars { velocity, .. } => velocity.iter().map(|v| v.as_slice()).collect(),
            OptState::Adam { m, v, .. } => m
                .iter()
                .map(|b| b.as_slice())
                .chain(v.iter().map(|b| b.as_slice()))
                .collect(),
        }
    }

    pub fn restore_buffers(&mut self, flat: Vec<Vec<F>>) -> Result<()> {
        match self {
            OptState::Lars { velocity, .. } => {
                if flat.len() != velocity.len() {
                    return Err(Error::data("optimizer buffer count mismatch"));
                }
                for (dst, src) in velocity.iter_mut().zip(flat) {
                    if dst.len() != src.len() {
                        return Err(Error::data("optimizer buffer length mismatch"));
                    }
                    *dst = src;
                }
            }
            OptState::Adam { m, v, .. } => {
                if flat.len() != m.len() + v.len() {
                    return Err(Error::data("optimizer buffer count mismatch"));
                }
                let (first, second) = flat.split_at(m.len());
                for (dst, src) in m.iter_mut().zip(first) {
                    if dst.len() != src.len() {
                        return Err(Error::data("optimizer buffer length mismatch"));
                    }
                    *dst = src.clone();
                }
                for (dst, src) in v.iter_mut().zip(second) {
                    if dst.len() != src.len() {
                        return Err(Error::data("optimizer buffer length mismatch"));
                    }
                    *dst = src.clone();
                }
            }
        }
        Ok(())
    }

    pub fn set_step_count(&mut self, t: u64) {
        match self {
            OptState::Lars { step_count, .. } | OptState::Adam { step_count, .. } => {
                *step_count = t;
            }
        }
    }
}

fn l2_norm<F: Real>(xs: &[F]) -> f64 {
    xs.iter().map(|x| x.to_f64() * x.to_f64()).sum::<f64>().sqrt()
}
