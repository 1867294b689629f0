use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use crate::error::{Error, Result};

/// Adamax optimizer state: first moment and exponentially weighted
/// infinity norm per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamaxState {
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub inf_norm: Vec<Vec<f64>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamaxState {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |store: &ParamStore| store.iter().map(|(_, p)| alloc::vec![0.0; p.tensor.numel()]).collect();
        Self { step_count: 0, first_moment: zeros(store), inf_norm: zeros(store), lr, beta1, beta2, eps }
    }
}

/// One Adamax update over every non-frozen parameter of `store` using its
/// accumulated gradient:
///
/// `m ← β₁m + (1−β₁)g`, `u ← max(β₂u, |g|)`, `θ ← θ − lr/(1−β₁ᵗ) · m/(u+ε)`.
pub fn adamax_step(store: &mut ParamStore, state: &mut AdamaxState) -> Result<()> {
    if state.first_moment.len() != store.len() || state.inf_norm.len() != store.len() {
        return Err(Error::Usage(format!(
            "optimizer state tracks {} parameters, store has {}",
            state.first_moment.len(),
            store.len()
        )));
    }
    for (i, p) in store.iter_mut().enumerate() {
        if p.frozen {
            continue;
        }
        if p.tensor.grad().is_none() {
            return Err(Error::Usage(format!("parameter `{}` has no gradient", p.name)));
        }
        if state.first_moment[i].len() != p.tensor.numel() {
            return Err(Error::Usage(format!("optimizer buffers for `{}` have the wrong size", p.name)));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let step = state.lr / (1.0 - libm::pow(state.beta1, t as f64));
    for (i, p) in store.iter_mut().enumerate() {
        if p.frozen {
            continue;
        }
        let grad = p.tensor.grad().expect("checked above").to_vec();
        let m = &mut state.first_moment[i];
        let u = &mut state.inf_norm[i];
        for (k, theta) in p.tensor.data_mut().iter_mut().enumerate() {
            let g = grad[k];
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
            u[k] = (state.beta2 * u[k]).max(g.abs());
            *theta -= step * m[k] / (u[k] + state.eps);
        }
    }
    Ok(())
}

/// Rescales all non-frozen gradients so their global L2 norm is at most
/// `max_norm`. Returns the factor applied (1.0 when untouched).
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let factor = max_norm / norm;
    for p in store.iter_mut().filter(|p| !p.frozen) {
        if let Some(g) = p.tensor.grad_mut() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }
    factor
}
