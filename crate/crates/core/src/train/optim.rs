use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for every entry of one parameter store (empty for
/// entries that never received a gradient).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        Self {
            config,
            step: 0,
            m: vec![Vec::new(); store.len()],
            v: vec![Vec::new(); store.len()],
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient and
/// non-trainable entries are left untouched.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, grads: &[(ParamId, Vec<T>)], state: &mut AdamState<T>) -> Result<()> {
    for (id, g) in grads {
        if g.len() != store.get(*id).numel() {
            return Err(mismatch("adam_step", store.get(*id).shape(), &[g.len()]));
        }
    }
    if state.m.len() != store.len() {
        return Err(mismatch("adam_step", &[state.m.len()], &[store.len()]));
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
    let (lr, eps) = (T::c(c.lr), T::c(c.eps));
    let (bc1, bc2) = (T::c(bc1), T::c(bc2));
    for (id, g) in grads {
        if !store.is_trainable(*id) {
            continue;
        }
        let i = id.0;
        if state.m[i].is_empty() {
            state.m[i] = vec![T::zero(); g.len()];
            state.v[i] = vec![T::zero(); g.len()];
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = store.get_mut(*id).data_mut();
        for k in 0..g.len() {
            m[k] = b1 * m[k] + (T::one() - b1) * g[k];
            v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            p[k] = p[k] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
