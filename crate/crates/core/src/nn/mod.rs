//! Dense tensors, the seven layer primitives with exact backward passes, and
//! a finite-difference gradient checker.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod gradcheck;
mod loss;
mod param;
mod pool;
mod tensor;

pub use activation::{dropout_mask, relu_backward, relu_forward, DropoutLayer, FlattenLayer, ReluLayer};
pub use batchnorm::{
    batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormLayer, BnCache, BN_EPS, BN_MOMENTUM,
};
pub use conv::{conv3d_backward, conv3d_forward, Conv3dLayer, ConvGrads};
pub use dense::{dense_backward, dense_forward, DenseLayer};
pub use gradcheck::{grad_check, grad_check_loss, relative_error, GradCheckReport};
pub use loss::{one_hot, softmax, softmax_cross_entropy};
pub use param::{Ctx, Layer, LayerKind, Mode, Param, ParamId, ParamStore};
pub use pool::{maxpool3d_backward, maxpool3d_forward, pooled_extent, MaxPool3dLayer};
pub use tensor::{Scalar, Tensor};

use rand::Rng;

/// He-normal initialization: zero-mean Gaussian with variance `2 / fan_in`.
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}
