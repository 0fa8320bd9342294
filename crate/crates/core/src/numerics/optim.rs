//! AdamW with decoupled weight decay.

use super::params::{ParamStore, Parameter};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
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
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug)]
pub struct AdamWState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl AdamWState {
    pub fn for_param(param: &Parameter) -> Self {
        Self {
            m: Tensor::zeros(param.value.shape()),
            v: Tensor::zeros(param.value.shape()),
            step: 0,
        }
    }
}

/// One AdamW update of `param` using its accumulated gradient:
/// `θ ← θ − lr·(m̂/(√v̂ + eps) + weight_decay·θ)`.
pub fn adamw_step(param: &mut Parameter, state: &mut AdamWState, cfg: &AdamWConfig) -> Result<()> {
    if state.m.shape() != param.value.shape() || state.v.shape() != param.value.shape() {
        return Err(Error::ShapeMismatch(format!(
            "optimizer state for `{}` does not match parameter shape {:?}",
            param.name,
            param.value.shape()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let grads = param.grad.data();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (i, theta) in param.value.data_mut().iter_mut().enumerate() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        *theta -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *theta);
    }
    Ok(())
}

/// AdamW over every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    states: Vec<AdamWState>,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            states: store.iter().map(AdamWState::for_param).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for (p, s) in store.iter_mut().zip(&mut self.states) {
            adamw_step(p, s, &self.cfg)?;
        }
        Ok(())
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step)
    }
}
