//! Adam with bias correction and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Array, Gradients, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates mirroring a [`ParameterStore`], plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Array>,
    pub v: Vec<Array>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParameterStore) -> Self {
        let zeros = || params.iter().map(|(_, _, a)| Array::zeros(a.shape())).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// Scales every gradient by `max_norm / norm` when the global L2 norm exceeds
/// `max_norm`. Returns the norm measured before clipping.
pub fn clip_global_norm(grads: &mut Gradients, names: &ParameterStore, max_norm: f64) -> Result<f64> {
    if max_norm.is_nan() || max_norm <= 0.0 {
        return Err(Error::Invalid(format!("max_norm {max_norm} must be positive")));
    }
    for (id, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of `{}`", names.name(id))));
        }
    }
    let norm = grads.global_norm();
    // relative slack keeps a second application a no-op after rounding
    if norm > max_norm * (1.0 + 1e-12) {
        grads.scale(max_norm / norm);
    }
    Ok(norm)
}

/// One Adam update. The step counter advances before the bias correction.
pub fn adam_step(params: &mut ParameterStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape("adam_step", "optimizer state does not mirror parameters"));
    }
    for (id, g) in grads.iter() {
        if g.shape() != params.get(id).shape() || state.m[id.index()].shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("`{}` gradient {:?} vs parameter {:?}", params.name(id), g.shape(), params.get(id).shape()),
            ));
        }
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let g = grads.get(id).data();
        let m = state.m[id.index()].data_mut();
        let v = state.v[id.index()].data_mut();
        let p = params.get_mut(id).data_mut();
        for k in 0..g.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
