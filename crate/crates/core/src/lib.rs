//! Hybrid min/max pooling downsampling (HPD) for CNN segmentation.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`rng`]: dense NCHW tensors and seeded generators.
//! * [`ops`]: pooling, 1x1 convolution, batch norm, ReLU, each with backward.
//! * [`hpd`]: the min+max fusion downsampler and its learning stage.
//! * [`net`]: a small U-Net style network with a pluggable downsampler per
//!   stage, plus parameter and FLOP accounting.
//! * [`train`]: loss, SGD with a poly schedule, Dice metrics, ablation sweeps.
//! * [`data`]: synthetic dataset generator, tensor container files, overlays.
//! * [`gradcheck`]: finite-difference verification of every backward pass.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod hpd;
pub mod net;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, LoadError, Result};
pub use rng::{rng_uniform, Rng};
pub use tensor::{map2, DType, Scalar, Shape4, Tensor4};
