use rand::Rng;
use rand::RngCore;

use super::param::{missing_cache, Ctx, Layer, LayerKind, Mode, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient passes where `x > 0`; zero elsewhere, including `x == 0`.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    dy.expect_shape(x.shape())?;
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

#[derive(Default)]
pub struct ReluLayer<T> {
    input: Option<Tensor<T>>,
}

impl<T: Scalar> ReluLayer<T> {
    pub fn new() -> Self {
        Self { input: None }
    }
}

impl<T: Scalar> Layer<T> for ReluLayer<T> {
    fn forward(&mut self, _store: &mut ParamStore<T>, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        self.input = (ctx.mode == Mode::Train).then(|| x.clone());
        Ok(relu_forward(x))
    }

    fn backward(&mut self, _store: &mut ParamStore<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache("relu"))?;
        relu_backward(&x, dy)
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Relu
    }
}

/// Inverted-dropout keep mask: each entry is `0` with probability `p`,
/// otherwise `1 / (1 - p)`.
pub fn dropout_mask<T: Scalar>(shape: &[usize], p: f64, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
    check_p(p)?;
    let scale = T::of(1.0 / (1.0 - p));
    let mut m = Tensor::zeros(shape);
    for v in m.data_mut() {
        *v = if rng.random::<f64>() < p { T::zero() } else { scale };
    }
    Ok(m)
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} must lie in [0, 1)")));
    }
    Ok(())
}

pub struct DropoutLayer<T> {
    p: f64,
    mask: Option<Tensor<T>>,
    frozen: Option<Tensor<T>>,
}

impl<T: Scalar> DropoutLayer<T> {
    pub fn new(p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(Self {
            p,
            mask: None,
            frozen: None,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Reuse `mask` on every train-mode forward (gradient checking).
    pub fn freeze_mask(&mut self, mask: Tensor<T>) {
        self.frozen = Some(mask);
    }
}

impl<T: Scalar> Layer<T> for DropoutLayer<T> {
    fn forward(&mut self, _store: &mut ParamStore<T>, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        if ctx.mode == Mode::Infer || self.p == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let mask = match &self.frozen {
            Some(m) => {
                m.expect_shape(x.shape())?;
                m.clone()
            }
            None => dropout_mask(x.shape(), self.p, ctx.rng)?,
        };
        let data = x.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect();
        self.mask = Some(mask);
        Tensor::from_vec(x.shape(), data)
    }

    fn backward(&mut self, _store: &mut ParamStore<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match self.mask.take() {
            None => Ok(dy.clone()),
            Some(mask) => {
                dy.expect_shape(mask.shape())?;
                let data = dy.data().iter().zip(mask.data()).map(|(&g, &m)| g * m).collect();
                Tensor::from_vec(dy.shape(), data)
            }
        }
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Dropout
    }
}

/// `[N, ...] → [N, prod(...)]`.
#[derive(Default)]
pub struct FlattenLayer {
    shape: Option<Vec<usize>>,
}

impl FlattenLayer {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for FlattenLayer {
    fn forward(&mut self, _store: &mut ParamStore<T>, x: &Tensor<T>, _ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let n = x.shape()[0];
        self.shape = Some(x.shape().to_vec());
        x.clone().reshape(&[n, x.len() / n])
    }

    fn backward(&mut self, _store: &mut ParamStore<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.shape.take().ok_or_else(|| missing_cache("flatten"))?;
        dy.clone().reshape(&shape)
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Flatten
    }
}
