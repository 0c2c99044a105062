//! Adam with bias correction. Moments are keyed by parameter name and
//! updated in name-sorted order, so identical inputs give bit-identical
//! parameter trajectories.

use super::{ParamSet, Tensor, TensorError};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// First/second moment buffers plus the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Advance the step counter. Call once per optimization step,
    /// before the per-parameter updates of that step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }
}

/// Update one parameter in the current step. The moment buffers are
/// keyed by `name`; rejects non-finite gradients.
pub fn adam_update_single(
    name: &str,
    param: &mut Tensor,
    grad: &Tensor,
    cfg: &AdamConfig,
    state: &mut AdamState,
) -> Result<(), TensorError> {
    if !grad.is_finite() {
        return Err(TensorError::NonFiniteGrad(name.to_string()));
    }
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let n = param.numel();
    let m = state
        .m
        .entry(name.to_string())
        .or_insert_with(|| vec![0.0; n]);
    let v = state
        .v
        .entry(name.to_string())
        .or_insert_with(|| vec![0.0; n]);
    let g = grad.data();
    let pd = param.data_mut();
    for i in 0..n {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        pd[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// One Adam step over every parameter that has a gradient entry.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &BTreeMap<String, Tensor>,
    cfg: &AdamConfig,
    state: &mut AdamState,
) -> Result<(), TensorError> {
    state.begin_step();
    for (name, grad) in grads {
        let p = match params.get_mut(name) {
            Some(p) => p,
            None => continue,
        };
        adam_update_single(name, p, grad, cfg, state)?;
    }
    Ok(())
}
