//! Differentiable primitives: pooling, pointwise convolution, batch norm,
//! ReLU and the strided-convolution baseline.

mod batchnorm;
mod conv1x1;
pub mod pool;
mod relu;
mod strided;

pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormParams, BnCache, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use conv1x1::{conv1x1_backward, conv1x1_forward, Conv1x1Params};
pub use pool::{
    avg_pool2d, avg_pool_backward, max_pool2d, min_pool2d, pool2d, pool_backward, pool_backward_into, Padding,
    PoolIndices, PoolKind,
};
pub use relu::{relu, relu_backward};
pub use strided::{strided_conv_backward, strided_conv_downsample, StridedConvParams};

use crate::error::Result;
use crate::rng::{rng_uniform, Rng};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Uniform weights in `[-b, b)` with `b = sqrt(3 / fan_in)`, i.e. unit
/// variance per fan-in.
pub fn fan_in_uniform<T: Scalar>(rng: &mut Rng, shape: Shape4, fan_in: usize) -> Result<Tensor4<T>> {
    let bound = (3.0 / fan_in.max(1) as f64).sqrt();
    rng_uniform(rng, shape, T::of_f64(-bound), T::of_f64(bound))
}
