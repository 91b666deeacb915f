//! Stride-1, same-padded 3D cross-correlation via slab-wise im2col + GEMM.
//!
//! Columns are built a few depth planes at a time so the scratch buffer stays
//! bounded for 96×96×48 inputs. Batch items run in parallel; the kernel
//! gradient is reduced over items in index order, so results do not depend on
//! the thread count.

use rayon::prelude::*;

use super::param::{missing_cache, Ctx, Layer, LayerKind, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Upper bound on im2col scratch elements per batch item.
const COL_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone, Copy)]
struct Geom {
    cin: usize,
    cout: usize,
    d: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
}

impl Geom {
    fn plane(&self) -> usize {
        self.h * self.w
    }
    fn spatial(&self) -> usize {
        self.d * self.plane()
    }
    fn rows(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }
    fn planes_per_slab(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.plane()).max(1)).clamp(1, self.d)
    }
}

fn geometry<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Geom> {
    x.expect_ndim(5, "conv3d input")?;
    kernel.expect_ndim(5, "conv3d kernel")?;
    let ks = kernel.shape();
    let xs = x.shape();
    let k = ks[2];
    if ks[3] != k || ks[4] != k {
        return Err(Error::shape(format!("conv3d kernel must be cubic, got {ks:?}")));
    }
    if k.is_multiple_of(2) {
        return Err(Error::shape(format!(
            "conv3d kernel size {k} must be odd for same padding"
        )));
    }
    if ks[1] != xs[1] {
        return Err(Error::shape(format!(
            "conv3d kernel expects {} input channels, input has {}",
            ks[1], xs[1]
        )));
    }
    bias.expect_shape(&[ks[0]])?;
    Ok(Geom {
        cin: xs[1],
        cout: ks[0],
        d: xs[2],
        h: xs[3],
        w: xs[4],
        k,
        pad: (k - 1) / 2,
    })
}

/// Shifted source range `[lo, hi)` along an axis of length `n` for tap `t`.
#[inline]
fn valid(n: usize, t: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(t).min(n);
    let hi = (n + pad).saturating_sub(t).min(n);
    (lo, hi.max(lo))
}

/// Fills `col` (`rows × planes·h·w`) from depth planes `z0..z0+planes`.
fn im2col<T: Scalar>(x: &[T], g: &Geom, z0: usize, planes: usize, col: &mut [T]) {
    let (h, w, k, pad) = (g.h, g.w, g.k, g.pad);
    let ncols = planes * g.plane();
    let mut r = 0;
    for ci in 0..g.cin {
        let xc = &x[ci * g.spatial()..(ci + 1) * g.spatial()];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let row = &mut col[r * ncols..(r + 1) * ncols];
                    let (xlo, xhi) = valid(w, kw, pad);
                    for zi in 0..planes {
                        let z = z0 + zi;
                        let sz = z as isize + kd as isize - pad as isize;
                        let dst_plane = &mut row[zi * h * w..(zi + 1) * h * w];
                        if sz < 0 || sz >= g.d as isize {
                            dst_plane.fill(T::zero());
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + kh as isize - pad as isize;
                            let dst = &mut dst_plane[y * w..(y + 1) * w];
                            if sy < 0 || sy >= h as isize {
                                dst.fill(T::zero());
                                continue;
                            }
                            let base = (sz as usize * h + sy as usize) * w;
                            dst[..xlo].fill(T::zero());
                            let s0 = base + xlo + kw - pad;
                            dst[xlo..xhi].copy_from_slice(&xc[s0..s0 + (xhi - xlo)]);
                            dst[xhi..].fill(T::zero());
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// Scatter-adds `col` back onto the input gradient; adjoint of [`im2col`].
fn col2im<T: Scalar>(col: &[T], g: &Geom, z0: usize, planes: usize, dx: &mut [T]) {
    let (h, w, k, pad) = (g.h, g.w, g.k, g.pad);
    let ncols = planes * g.plane();
    let mut r = 0;
    for ci in 0..g.cin {
        let dxc = &mut dx[ci * g.spatial()..(ci + 1) * g.spatial()];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let row = &col[r * ncols..(r + 1) * ncols];
                    let (xlo, xhi) = valid(w, kw, pad);
                    for zi in 0..planes {
                        let sz = (z0 + zi) as isize + kd as isize - pad as isize;
                        if sz < 0 || sz >= g.d as isize {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + kh as isize - pad as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let src = &row[(zi * h + y) * w..(zi * h + y + 1) * w];
                            let base = (sz as usize * h + sy as usize) * w;
                            let s0 = base + xlo + kw - pad;
                            for (d, &s) in dxc[s0..s0 + (xhi - xlo)].iter_mut().zip(&src[xlo..xhi]) {
                                *d += s;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

fn forward_item<T: Scalar>(x: &[T], kernel: &[T], bias: &[T], g: &Geom, y: &mut [T]) {
    let s = g.spatial();
    let rows = g.rows();
    let per = g.planes_per_slab();
    let mut col = vec![T::zero(); rows * per * g.plane()];
    let mut z0 = 0;
    while z0 < g.d {
        let planes = per.min(g.d - z0);
        let ncols = planes * g.plane();
        let col = &mut col[..rows * ncols];
        im2col(x, g, z0, planes, col);
        let off = z0 * g.plane();
        T::gemm(
            g.cout,
            rows,
            ncols,
            T::one(),
            kernel,
            rows as isize,
            1,
            col,
            ncols as isize,
            1,
            T::zero(),
            &mut y[off..],
            s as isize,
            1,
        );
        z0 += planes;
    }
    for (co, b) in bias.iter().enumerate() {
        for v in &mut y[co * s..(co + 1) * s] {
            *v += *b;
        }
    }
}

/// Returns `(dW_item, db_item)` and writes this item's dL/dx into `dx`.
fn backward_item<T: Scalar>(x: &[T], kernel: &[T], dy: &[T], g: &Geom, dx: &mut [T]) -> (Vec<T>, Vec<T>) {
    let s = g.spatial();
    let rows = g.rows();
    let per = g.planes_per_slab();
    let mut col = vec![T::zero(); rows * per * g.plane()];
    let mut dcol = vec![T::zero(); rows * per * g.plane()];
    let mut dw = vec![T::zero(); g.cout * rows];
    dx.fill(T::zero());
    let mut z0 = 0;
    while z0 < g.d {
        let planes = per.min(g.d - z0);
        let ncols = planes * g.plane();
        let off = z0 * g.plane();
        let col = &mut col[..rows * ncols];
        let dcol = &mut dcol[..rows * ncols];
        im2col(x, g, z0, planes, col);
        // dW += dY_slab · colᵀ
        T::gemm(
            g.cout,
            ncols,
            rows,
            T::one(),
            &dy[off..],
            s as isize,
            1,
            col,
            1,
            ncols as isize,
            T::one(),
            &mut dw,
            rows as isize,
            1,
        );
        // dcol = Wᵀ · dY_slab
        T::gemm(
            rows,
            g.cout,
            ncols,
            T::one(),
            kernel,
            1,
            rows as isize,
            &dy[off..],
            s as isize,
            1,
            T::zero(),
            dcol,
            ncols as isize,
            1,
        );
        col2im(dcol, g, z0, planes, dx);
        z0 += planes;
    }
    let db = (0..g.cout)
        .map(|co| dy[co * s..(co + 1) * s].iter().copied().sum())
        .collect();
    (dw, db)
}

/// `x[N,Cin,D,H,W] ⋆ kernel[Cout,Cin,k,k,k] + bias[Cout]` with zero padding `(k-1)/2`.
pub fn conv3d_forward<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let g = geometry(x, kernel, bias)?;
    let n = x.shape()[0];
    let mut y = Tensor::zeros(&[n, g.cout, g.d, g.h, g.w]);
    let in_item = g.cin * g.spatial();
    let out_item = g.cout * g.spatial();
    y.data_mut()
        .par_chunks_mut(out_item)
        .zip(x.data().par_chunks(in_item))
        .for_each(|(yi, xi)| forward_item(xi, kernel.data(), bias.data(), &g, yi));
    Ok(y)
}

pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dkernel: Tensor<T>,
    pub dbias: Tensor<T>,
}

pub fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = geometry(x, kernel, bias)?;
    let n = x.shape()[0];
    dy.expect_shape(&[n, g.cout, g.d, g.h, g.w])?;
    let in_item = g.cin * g.spatial();
    let out_item = g.cout * g.spatial();
    let mut dx = Tensor::zeros(x.shape());
    let partials: Vec<(Vec<T>, Vec<T>)> = dx
        .data_mut()
        .par_chunks_mut(in_item)
        .zip(x.data().par_chunks(in_item))
        .zip(dy.data().par_chunks(out_item))
        .map(|((dxi, xi), dyi)| backward_item(xi, kernel.data(), dyi, &g, dxi))
        .collect();
    let mut dkernel = Tensor::zeros(kernel.shape());
    let mut dbias = Tensor::zeros(bias.shape());
    for (dw, db) in &partials {
        for (a, &b) in dkernel.data_mut().iter_mut().zip(dw) {
            *a += b;
        }
        for (a, &b) in dbias.data_mut().iter_mut().zip(db) {
            *a += b;
        }
    }
    Ok(ConvGrads { dx, dkernel, dbias })
}

pub struct Conv3dLayer<T> {
    pub kernel: ParamId,
    pub bias: ParamId,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv3dLayer<T> {
    pub fn new(kernel: ParamId, bias: ParamId) -> Self {
        Self {
            kernel,
            bias,
            input: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Conv3dLayer<T> {
    fn forward(&mut self, store: &mut ParamStore<T>, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let y = conv3d_forward(x, store.value(self.kernel), store.value(self.bias))?;
        self.input = match ctx.mode {
            super::param::Mode::Train => Some(x.clone()),
            super::param::Mode::Infer => None,
        };
        Ok(y)
    }

    fn backward(&mut self, store: &mut ParamStore<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache("conv3d"))?;
        let g = conv3d_backward(&x, store.value(self.kernel), store.value(self.bias), dy)?;
        store.accumulate_grad(self.kernel, &g.dkernel)?;
        store.accumulate_grad(self.bias, &g.dbias)?;
        Ok(g.dx)
    }

    fn params(&self) -> Vec<ParamId> {
        vec![self.kernel, self.bias]
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Conv3d
    }
}
