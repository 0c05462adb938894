use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::Result;

/// Adam moments and hyperparameters for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamSet,
    pub v: ParamSet,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 0.001;

    /// Fresh state with zero moments shaped like `params`.
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) -> Result<()> {
    params.ensure_compatible(grads, "adam gradients")?;
    params.ensure_compatible(&state.m, "adam first moment")?;
    params.ensure_compatible(&state.v, "adam second moment")?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.lr, state.epsilon);
    for (((p, g), m), v) in params
        .buffers_mut()
        .zip(grads.buffers())
        .zip(state.m.buffers_mut())
        .zip(state.v.buffers_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
