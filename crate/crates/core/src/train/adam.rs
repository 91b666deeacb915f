use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

/// One bias-corrected ADAM update of `theta` in place.
pub fn adam_step<T: Scalar>(theta: &mut [T], grad: &[T], state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    if grad.len() != theta.len() || state.m.len() != theta.len() || state.v.len() != theta.len() {
        return Err(Error::shape(format!(
            "adam: parameter {} / gradient {} / state {} lengths differ",
            theta.len(),
            grad.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let one = T::one();
    let c1 = one - T::of(cfg.beta1.powi(state.t as i32));
    let c2 = one - T::of(cfg.beta2.powi(state.t as i32));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        theta[i] -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

/// ADAM over every trainable tensor of a store. Aliased parameters have a
/// single entry, hence a single moment pair.
pub struct Adam {
    pub cfg: AdamConfig,
    states: Vec<Option<AdamState<f32>>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            states: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<f32>) -> Result<()> {
        let ids = store.trainable_ids();
        if self.states.len() < store.len() {
            self.states.resize(store.len(), None);
        }
        for id in ids {
            let p = store.get_mut(id);
            let st = self.states[id.index()].get_or_insert_with(|| AdamState::new(p.value.len()));
            let grad: &Tensor<f32> = &p.grad;
            adam_step(p.value.data_mut(), grad.data(), st, &self.cfg)?;
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.states.iter().flatten().map(|s| s.t).max().unwrap_or(0)
    }
}
