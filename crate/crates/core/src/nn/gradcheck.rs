//! Central-difference verification of analytic gradients in 64-bit.
//!
//! The scalar objective is `L = Σ y ⊙ r` for a fixed random projection `r`,
//! so every output element contributes to the checked gradient. Step size is
//! `h = 1e-5 · max(1, |θ|)`. Each tensor's error is
//! `‖g_analytic − g_numeric‖₂ / (‖g_analytic‖₂ + ‖g_numeric‖₂)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::softmax_cross_entropy;
use super::param::{Ctx, Layer, Mode, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

const REL_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(tensor name, relative error)`; the input is reported as `"input"`.
    pub entries: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn new(entries: Vec<(String, f64)>, tolerance: f64) -> Self {
        let max_rel_error = entries.iter().map(|e| e.1).fold(0.0, f64::max);
        Self {
            passed: max_rel_error < tolerance && max_rel_error.is_finite(),
            entries,
            max_rel_error,
            tolerance,
        }
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    if na + nn == 0.0 {
        0.0
    } else {
        diff / (na + nn)
    }
}

fn step(v: f64) -> f64 {
    REL_STEP * v.abs().max(1.0)
}

/// The forward pass reseeds its generator every call, so even an unfrozen
/// dropout layer sees the same mask for every perturbation.
fn objective(
    layer: &mut dyn Layer<f64>,
    store: &mut ParamStore<f64>,
    x: &Tensor<f64>,
    r: &Tensor<f64>,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = Ctx::new(Mode::Train, &mut rng);
    let y = layer.forward(store, x, &mut ctx)?;
    Ok(y.dot(r))
}

/// Compares the analytic gradient of `layer` against central differences for
/// the input and every trainable parameter the layer reads.
pub fn grad_check(
    layer: &mut dyn Layer<f64>,
    store: &mut ParamStore<f64>,
    input: &Tensor<f64>,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let fwd_seed = seed.wrapping_add(1);

    let probe = {
        let mut g = ChaCha8Rng::seed_from_u64(fwd_seed);
        let mut ctx = Ctx::new(Mode::Train, &mut g);
        layer.forward(store, input, &mut ctx)?
    };
    let r = Tensor::<f64>::uniform(probe.shape(), -1.0, 1.0, &mut rng);

    store.zero_grads();
    let y = {
        let mut g = ChaCha8Rng::seed_from_u64(fwd_seed);
        let mut ctx = Ctx::new(Mode::Train, &mut g);
        layer.forward(store, input, &mut ctx)?
    };
    debug_assert_eq!(y.shape(), r.shape());
    let dx = layer.backward(store, &r)?;

    let mut entries = Vec::new();

    let mut x = input.clone();
    let mut numeric = vec![0.0; x.len()];
    for i in 0..x.len() {
        let v = x.data()[i];
        let h = step(v);
        x.data_mut()[i] = v + h;
        let lp = objective(layer, store, &x, &r, fwd_seed)?;
        x.data_mut()[i] = v - h;
        let lm = objective(layer, store, &x, &r, fwd_seed)?;
        x.data_mut()[i] = v;
        numeric[i] = (lp - lm) / (2.0 * h);
    }
    entries.push(("input".to_string(), relative_error(dx.data(), &numeric)));

    for id in layer.params() {
        let analytic = store.grad(id).data().to_vec();
        let name = store.get(id).name.clone();
        let len = analytic.len();
        let mut numeric = vec![0.0; len];
        for i in 0..len {
            let v = store.value(id).data()[i];
            let h = step(v);
            store.value_mut(id).data_mut()[i] = v + h;
            let lp = objective(layer, store, input, &r, fwd_seed)?;
            store.value_mut(id).data_mut()[i] = v - h;
            let lm = objective(layer, store, input, &r, fwd_seed)?;
            store.value_mut(id).data_mut()[i] = v;
            numeric[i] = (lp - lm) / (2.0 * h);
        }
        entries.push((name, relative_error(&analytic, &numeric)));
    }
    Ok(GradCheckReport::new(entries, tolerance))
}

/// Checks the softmax cross-entropy gradient with respect to the logits.
pub fn grad_check_loss(logits: &Tensor<f64>, labels: &Tensor<f64>, tolerance: f64) -> Result<GradCheckReport> {
    let (_, analytic) = softmax_cross_entropy(logits, labels)?;
    let mut x = logits.clone();
    let mut numeric = vec![0.0; x.len()];
    for i in 0..x.len() {
        let v = x.data()[i];
        let h = step(v);
        x.data_mut()[i] = v + h;
        let (lp, _) = softmax_cross_entropy(&x, labels)?;
        x.data_mut()[i] = v - h;
        let (lm, _) = softmax_cross_entropy(&x, labels)?;
        x.data_mut()[i] = v;
        numeric[i] = (lp - lm) / (2.0 * h);
    }
    Ok(GradCheckReport::new(
        vec![("logits".to_string(), relative_error(analytic.data(), &numeric))],
        tolerance,
    ))
}
