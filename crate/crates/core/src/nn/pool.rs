use rayon::prelude::*;

use super::param::{missing_cache, Ctx, Layer, LayerKind, Mode, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::Result;

/// `ceil(n / 2)`: output extent of a 2-wide, stride-2 ceil-mode pool.
pub fn pooled_extent(n: usize) -> usize {
    n.div_ceil(2)
}

/// 2×2×2 max pool, stride 2, ceil mode. Returns the output and, for every
/// output element, the flat input index of its window maximum (first
/// occurrence on ties). Partial windows at the far boundary pool over their
/// in-bounds voxels only.
pub fn maxpool3d_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    x.expect_ndim(5, "maxpool3d input")?;
    let s = x.shape();
    let (n, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let (od, oh, ow) = (pooled_extent(d), pooled_extent(h), pooled_extent(w));
    let in_map = d * h * w;
    let out_map = od * oh * ow;
    let mut y = Tensor::zeros(&[n, c, od, oh, ow]);
    let mut arg = vec![0usize; n * c * out_map];
    y.data_mut()
        .par_chunks_mut(out_map)
        .zip(arg.par_chunks_mut(out_map))
        .enumerate()
        .for_each(|(m, (ym, am))| {
            let base = m * in_map;
            let xm = &x.data()[base..base + in_map];
            for z in 0..od {
                for yy in 0..oh {
                    for xx in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_i = usize::MAX;
                        for dz in 0..2 {
                            let sz = 2 * z + dz;
                            if sz >= d {
                                continue;
                            }
                            for dy in 0..2 {
                                let sy = 2 * yy + dy;
                                if sy >= h {
                                    continue;
                                }
                                for dx in 0..2 {
                                    let sx = 2 * xx + dx;
                                    if sx >= w {
                                        continue;
                                    }
                                    let i = (sz * h + sy) * w + sx;
                                    let v = xm[i];
                                    if best_i == usize::MAX || v > best {
                                        best = v;
                                        best_i = i;
                                    }
                                }
                            }
                        }
                        let o = (z * oh + yy) * ow + xx;
                        ym[o] = best;
                        am[o] = base + best_i;
                    }
                }
            }
        });
    Ok((y, arg))
}

/// Routes each upstream gradient to its window's argmax.
pub fn maxpool3d_backward<T: Scalar>(dy: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor<T>> {
    if dy.len() != argmax.len() {
        return Err(crate::Error::shape(format!(
            "maxpool3d backward: {} gradients for {} windows",
            dy.len(),
            argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let dxd = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dxd[i] += g;
    }
    Ok(dx)
}

#[derive(Default)]
pub struct MaxPool3dLayer {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool3dLayer {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for MaxPool3dLayer {
    fn forward(&mut self, _store: &mut ParamStore<T>, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let (y, arg) = maxpool3d_forward(x)?;
        self.cache = (ctx.mode == Mode::Train).then(|| (arg, x.shape().to_vec()));
        Ok(y)
    }

    fn backward(&mut self, _store: &mut ParamStore<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (arg, shape) = self.cache.take().ok_or_else(|| missing_cache("maxpool3d"))?;
        maxpool3d_backward(dy, &arg, &shape)
    }

    fn kind(&self) -> LayerKind {
        LayerKind::MaxPool3d
    }
}
