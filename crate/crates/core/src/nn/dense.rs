use super::param::{missing_cache, Ctx, Layer, LayerKind, Mode, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

fn check<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    x.expect_ndim(2, "dense input")?;
    weight.expect_ndim(2, "dense weight")?;
    let (n, fin) = (x.shape()[0], x.shape()[1]);
    let fout = weight.shape()[0];
    if weight.shape()[1] != fin {
        return Err(Error::shape(format!(
            "dense weight {:?} does not accept {fin} input features",
            weight.shape()
        )));
    }
    bias.expect_shape(&[fout])?;
    Ok((n, fin, fout))
}

/// `y = x · Wᵀ + b` for `x[N, F_in]`, `W[F_out, F_in]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, fin, fout) = check(x, weight, bias)?;
    let mut y = Tensor::zeros(&[n, fout]);
    for row in y.data_mut().chunks_mut(fout) {
        row.copy_from_slice(bias.data());
    }
    T::gemm(
        n,
        fin,
        fout,
        T::one(),
        x.data(),
        fin as isize,
        1,
        weight.data(),
        1,
        fin as isize,
        T::one(),
        y.data_mut(),
        fout as isize,
        1,
    );
    Ok(y)
}

/// Returns `(dx, dW, db)`.
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, fin, fout) = check(x, weight, bias)?;
    dy.expect_shape(&[n, fout])?;
    let mut dx = Tensor::zeros(&[n, fin]);
    T::gemm(
        n,
        fout,
        fin,
        T::one(),
        dy.data(),
        fout as isize,
        1,
        weight.data(),
        fin as isize,
        1,
        T::zero(),
        dx.data_mut(),
        fin as isize,
        1,
    );
    let mut dw = Tensor::zeros(&[fout, fin]);
    T::gemm(
        fout,
        n,
        fin,
        T::one(),
        dy.data(),
        1,
        fout as isize,
        x.data(),
        fin as isize,
        1,
        T::zero(),
        dw.data_mut(),
        fin as isize,
        1,
    );
    let mut db = Tensor::zeros(&[fout]);
    for row in dy.data().chunks(fout) {
        for (a, &g) in db.data_mut().iter_mut().zip(row) {
            *a += g;
        }
    }
    Ok((dx, dw, db))
}

pub struct DenseLayer<T> {
    pub weight: ParamId,
    pub bias: ParamId,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weight: ParamId, bias: ParamId) -> Self {
        Self {
            weight,
            bias,
            input: None,
        }
    }
}

impl<T: Scalar> Layer<T> for DenseLayer<T> {
    fn forward(&mut self, store: &mut ParamStore<T>, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let y = dense_forward(x, store.value(self.weight), store.value(self.bias))?;
        self.input = (ctx.mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, store: &mut ParamStore<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache("dense"))?;
        let (dx, dw, db) = dense_backward(&x, store.value(self.weight), store.value(self.bias), dy)?;
        store.accumulate_grad(self.weight, &dw)?;
        store.accumulate_grad(self.bias, &db)?;
        Ok(dx)
    }

    fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }
}
