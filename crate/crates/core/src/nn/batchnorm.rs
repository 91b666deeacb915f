//! Per-channel batch normalization over axis 1 of `[N, C, ...]` tensors.

use super::param::{missing_cache, Ctx, Layer, LayerKind, Mode, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Values retained by a train-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
}

fn layout<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if x.ndim() < 2 {
        return Err(Error::shape(format!(
            "batchnorm needs [N, C, ...], got {:?}",
            x.shape()
        )));
    }
    let n = x.shape()[0];
    let c = x.shape()[1];
    let inner = x.shape()[2..].iter().product::<usize>();
    Ok((n, c, inner))
}

/// Train-mode normalization by batch statistics. Updates
/// `running ← momentum·running + (1 − momentum)·batch` using the biased batch
/// variance.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (n, c, inner) = layout(x)?;
    for t in [gamma, beta, &*running_mean, &*running_var] {
        t.expect_shape(&[c])?;
    }
    let m = n * inner;
    if m < 2 {
        return Err(Error::Precondition(format!(
            "train-mode batchnorm needs at least 2 values per channel, got {m}"
        )));
    }
    let mf = T::of(m as f64);
    let mom = T::of(momentum);
    let mut y = Tensor::zeros(x.shape());
    let mut x_hat = Tensor::zeros(x.shape());
    let mut inv_std = vec![T::zero(); c];
    let xd = x.data();
    for ch in 0..c {
        let mut sum = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * inner;
            sum += xd[off..off + inner].iter().copied().sum::<T>();
        }
        let mean = sum / mf;
        let mut ss = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * inner;
            ss += xd[off..off + inner].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
        }
        let var = ss / mf;
        let is = T::one() / (var + T::of(eps)).sqrt();
        inv_std[ch] = is;
        let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
        for b in 0..n {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                let xh = (xd[i] - mean) * is;
                x_hat.data_mut()[i] = xh;
                y.data_mut()[i] = g * xh + bt;
            }
        }
        let rm = &mut running_mean.data_mut()[ch];
        *rm = mom * *rm + (T::one() - mom) * mean;
        let rv = &mut running_var.data_mut()[ch];
        *rv = mom * *rv + (T::one() - mom) * var;
    }
    Ok((y, BnCache { x_hat, inv_std }))
}

pub fn batchnorm_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let (n, c, inner) = layout(x)?;
    for t in [gamma, beta, running_mean, running_var] {
        t.expect_shape(&[c])?;
    }
    let mut y = Tensor::zeros(x.shape());
    for ch in 0..c {
        let is = T::one() / (running_var.data()[ch] + T::of(eps)).sqrt();
        let scale = gamma.data()[ch] * is;
        let shift = beta.data()[ch] - running_mean.data()[ch] * scale;
        for b in 0..n {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                y.data_mut()[i] = x.data()[i] * scale + shift;
            }
        }
    }
    Ok(y)
}

/// Returns `(dx, dgamma, dbeta)` for a train-mode forward.
pub fn batchnorm_backward<T: Scalar>(
    dy: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    dy.expect_shape(cache.x_hat.shape())?;
    let (n, c, inner) = layout(dy)?;
    let mf = T::of((n * inner) as f64);
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let (dyd, xh) = (dy.data(), cache.x_hat.data());
    for ch in 0..c {
        let mut sdy = T::zero();
        let mut sdyx = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                sdy += dyd[i];
                sdyx += dyd[i] * xh[i];
            }
        }
        dgamma.data_mut()[ch] = sdyx;
        dbeta.data_mut()[ch] = sdy;
        let k = gamma.data()[ch] * cache.inv_std[ch] / mf;
        for b in 0..n {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                dx.data_mut()[i] = k * (mf * dyd[i] - sdy - xh[i] * sdyx);
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

pub struct BatchNormLayer<T> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(gamma: ParamId, beta: ParamId, running_mean: ParamId, running_var: ParamId) -> Self {
        Self {
            gamma,
            beta,
            running_mean,
            running_var,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    /// Registers γ=1, β=0, running mean 0 and running variance 1 under `prefix`.
    pub fn register(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Result<Self> {
        let gamma = store.add_param(&format!("{prefix}.gamma"), Tensor::full(&[channels], T::one()))?;
        let beta = store.add_param(&format!("{prefix}.beta"), Tensor::zeros(&[channels]))?;
        let rm = store.add_buffer(&format!("{prefix}.running_mean"), Tensor::zeros(&[channels]))?;
        let rv = store.add_buffer(&format!("{prefix}.running_var"), Tensor::full(&[channels], T::one()))?;
        Ok(Self::new(gamma, beta, rm, rv))
    }
}

impl<T: Scalar> Layer<T> for BatchNormLayer<T> {
    fn forward(&mut self, store: &mut ParamStore<T>, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        match ctx.mode {
            Mode::Train => {
                let gamma = store.value(self.gamma).clone();
                let beta = store.value(self.beta).clone();
                let mut rm = store.value(self.running_mean).clone();
                let mut rv = store.value(self.running_var).clone();
                let (y, cache) = batchnorm_train(x, &gamma, &beta, &mut rm, &mut rv, self.momentum, self.eps)?;
                *store.value_mut(self.running_mean) = rm;
                *store.value_mut(self.running_var) = rv;
                self.cache = Some(cache);
                Ok(y)
            }
            Mode::Infer => {
                self.cache = None;
                batchnorm_infer(
                    x,
                    store.value(self.gamma),
                    store.value(self.beta),
                    store.value(self.running_mean),
                    store.value(self.running_var),
                    self.eps,
                )
            }
        }
    }

    fn backward(&mut self, store: &mut ParamStore<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("batchnorm"))?;
        let (dx, dg, db) = batchnorm_backward(dy, &cache, store.value(self.gamma))?;
        store.accumulate_grad(self.gamma, &dg)?;
        store.accumulate_grad(self.beta, &db)?;
        Ok(dx)
    }

    fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }

    fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats(y: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (n, c, inner) = layout(y).unwrap();
        let vals: Vec<f64> = (0..n)
            .flat_map(|b| y.data()[(b * c + ch) * inner..(b * c + ch + 1) * inner].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = Tensor::full(&[2, 3, 2, 2, 2], 4.0f64);
        let (g, b) = (Tensor::full(&[3], 1.0), Tensor::zeros(&[3]));
        let (mut rm, mut rv) = (Tensor::zeros(&[3]), Tensor::full(&[3], 1.0));
        let (y, _) = batchnorm_train(&x, &g, &b, &mut rm, &mut rv, BN_MOMENTUM, BN_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!((rm.data()[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn affine_shift_sets_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::randn(&[4, 3, 2, 2, 2], 3.0, &mut rng);
        let (g, b) = (Tensor::full(&[3], 2.0), Tensor::full(&[3], 3.0));
        let (mut rm, mut rv) = (Tensor::zeros(&[3]), Tensor::full(&[3], 1.0));
        let (y, _) = batchnorm_train(&x, &g, &b, &mut rm, &mut rv, BN_MOMENTUM, BN_EPS).unwrap();
        for ch in 0..3 {
            assert!((stats(&y, ch).0 - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn unit_moments_in_train_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::randn(&[8, 2, 3, 3, 3], 0.5, &mut rng);
        let (g, b) = (Tensor::full(&[2], 1.0), Tensor::zeros(&[2]));
        let (mut rm, mut rv) = (Tensor::zeros(&[2]), Tensor::full(&[2], 1.0));
        let (y, _) = batchnorm_train(&x, &g, &b, &mut rm, &mut rv, BN_MOMENTUM, BN_EPS).unwrap();
        for ch in 0..2 {
            let (m, v) = stats(&y, ch);
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn single_value_batch_rejected() {
        let x = Tensor::full(&[1, 2], 1.0f32);
        let (g, b) = (Tensor::full(&[2], 1.0), Tensor::zeros(&[2]));
        let (mut rm, mut rv) = (Tensor::zeros(&[2]), Tensor::full(&[2], 1.0));
        assert!(batchnorm_train(&x, &g, &b, &mut rm, &mut rv, BN_MOMENTUM, BN_EPS).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert!("sideways".parse::<Mode>().is_err());
        assert_eq!("infer".parse::<Mode>().unwrap(), Mode::Infer);
    }
}
