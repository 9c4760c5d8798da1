//! Hybrid pooling downsampling.
//!
//! Two halves:
//!
//! * **Encoding**: every non-overlapping `k x k` window is reduced to both its
//!   minimum and its maximum. In [`Fusion::Sum`] mode the two are added into a
//!   single value per window; in [`Fusion::Concat`] mode the min and max maps
//!   are stacked along the channel axis (min channels first).
//! * **Learning**: a 1x1 convolution remaps the channels, followed by batch
//!   norm and ReLU.
//!
//! In sum mode the encoding is `F(Z) = min(Z) + max(Z)` per window, so its
//! subgradient routes the upstream gradient to both the argmin and the
//! argmax. When a window is constant, both selections land on its first
//! element (row-major tie rule), which then receives twice the gradient.

use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_backward, batchnorm_forward, conv1x1_backward, conv1x1_forward, pool2d, pool_backward_into, relu,
    relu_backward, BatchNormParams, BnCache, Conv1x1Params, Padding, PoolIndices, PoolKind,
};
use crate::rng::Rng;
use crate::tensor::{Scalar, Shape4, Tensor4};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Fusion {
    #[default]
    Sum,
    Concat,
}

impl Fusion {
    pub fn as_str(self) -> &'static str {
        match self {
            Fusion::Sum => "sum",
            Fusion::Concat => "concat",
        }
    }

    /// Channels fed to the 1x1 convolution for `c_in` input channels.
    pub fn encoded_channels(self, c_in: usize) -> usize {
        match self {
            Fusion::Sum => c_in,
            Fusion::Concat => 2 * c_in,
        }
    }
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sum" => Ok(Fusion::Sum),
            "concat" => Ok(Fusion::Concat),
            other => Err(Error::Config(format!("unknown fusion mode {other:?} (sum|concat)"))),
        }
    }
}

impl std::fmt::Display for Fusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpdParams<T> {
    pub conv: Conv1x1Params<T>,
    pub bn: BatchNormParams<T>,
    pub fusion: Fusion,
}

impl<T: Scalar> HpdParams<T> {
    /// Fan-in uniform conv weights, zero bias, gamma = 1, beta = 0.
    pub fn init(c_in: usize, c_out: usize, fusion: Fusion, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            conv: Conv1x1Params::init(fusion.encoded_channels(c_in), c_out, rng)?,
            bn: BatchNormParams::new(c_out)?,
            fusion,
        })
    }

    /// All-zero gradient container.
    pub fn zeros(c_in: usize, c_out: usize, fusion: Fusion) -> Result<Self> {
        Ok(Self {
            conv: Conv1x1Params::zeros(fusion.encoded_channels(c_in), c_out)?,
            bn: BatchNormParams::zeros(c_out)?,
            fusion,
        })
    }

    /// Channels of the tensor this module downsamples.
    pub fn c_in(&self) -> usize {
        match self.fusion {
            Fusion::Sum => self.conv.c_in(),
            Fusion::Concat => self.conv.c_in() / 2,
        }
    }

    pub fn c_out(&self) -> usize {
        self.conv.c_out()
    }

    pub fn num_params(&self) -> usize {
        self.conv.weight.len() + self.conv.bias.len() + self.bn.gamma.len() + self.bn.beta.len()
    }
}

/// Argmin/argmax bookkeeping for one encoding pass.
#[derive(Debug, Clone)]
pub struct FuseCache {
    min_idx: PoolIndices,
    max_idx: PoolIndices,
}

impl FuseCache {
    pub fn min_indices(&self) -> &PoolIndices {
        &self.min_idx
    }

    pub fn max_indices(&self) -> &PoolIndices {
        &self.max_idx
    }

    pub fn input_shape(&self) -> Shape4 {
        self.min_idx.input_shape()
    }
}

/// Per-window `min + max` over `k x k` windows.
pub fn minmax_fuse<T: Scalar>(x: &Tensor4<T>, k: usize) -> Result<(Tensor4<T>, FuseCache)> {
    minmax_fuse_with(x, k, Padding::Strict)
}

pub fn minmax_fuse_with<T: Scalar>(x: &Tensor4<T>, k: usize, padding: Padding) -> Result<(Tensor4<T>, FuseCache)> {
    let (mn, min_idx) = pool2d(x, k, PoolKind::Min, padding)?;
    let (mx, max_idx) = pool2d(x, k, PoolKind::Max, padding)?;
    let fused = mn.add(&mx)?;
    Ok((fused, FuseCache { min_idx, max_idx }))
}

/// Gradient of [`minmax_fuse`]: the upstream gradient of every window goes
/// to both its argmin and its argmax, accumulating where they coincide.
pub fn minmax_fuse_backward<T: Scalar>(grad: &Tensor4<T>, cache: &FuseCache) -> Result<Tensor4<T>> {
    let mut gx = Tensor4::zeros(cache.input_shape())?;
    pool_backward_into(grad, &cache.min_idx, &mut gx)?;
    pool_backward_into(grad, &cache.max_idx, &mut gx)?;
    Ok(gx)
}

/// Min and max maps stacked along channels: `[min_0..min_c, max_0..max_c]`.
pub fn minmax_concat<T: Scalar>(x: &Tensor4<T>, k: usize) -> Result<(Tensor4<T>, FuseCache)> {
    let (mn, min_idx) = pool2d(x, k, PoolKind::Min, Padding::Strict)?;
    let (mx, max_idx) = pool2d(x, k, PoolKind::Max, Padding::Strict)?;
    let out = concat_channels(&mn, &mx)?;
    Ok((out, FuseCache { min_idx, max_idx }))
}

pub fn minmax_concat_backward<T: Scalar>(grad: &Tensor4<T>, cache: &FuseCache) -> Result<Tensor4<T>> {
    let (g_min, g_max) = split_channels(grad, cache.min_idx.shape()[1])?;
    let mut gx = Tensor4::zeros(cache.input_shape())?;
    pool_backward_into(&g_min, &cache.min_idx, &mut gx)?;
    pool_backward_into(&g_max, &cache.max_idx, &mut gx)?;
    Ok(gx)
}

/// Stack `a` then `b` along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (n, ca, h, w) = a.dims();
    let (nb, cb, hb, wb) = b.dims();
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::Shape(format!(
            "concat: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Tensor4::from_vec([n, ca + cb, h, w], data)
}

/// Split channels into `[0, first)` and `[first, c)`.
pub fn split_channels<T: Scalar>(t: &Tensor4<T>, first: usize) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let (n, c, h, w) = t.dims();
    if first == 0 || first >= c {
        return Err(Error::Shape(format!("cannot split {c} channels at {first}")));
    }
    let hw = h * w;
    let mut a = Vec::with_capacity(n * first * hw);
    let mut b = Vec::with_capacity(n * (c - first) * hw);
    for i in 0..n {
        let s = t.sample(i);
        a.extend_from_slice(&s[..first * hw]);
        b.extend_from_slice(&s[first * hw..]);
    }
    Ok((
        Tensor4::from_vec([n, first, h, w], a)?,
        Tensor4::from_vec([n, c - first, h, w], b)?,
    ))
}

/// Everything [`hpd_backward`] needs; nothing is recomputed.
#[derive(Debug, Clone)]
pub struct HpdCache<T> {
    fusion: Fusion,
    fuse: FuseCache,
    conv_input: Tensor4<T>,
    bn: BnCache<T>,
    pre_relu: Tensor4<T>,
}

impl<T: Scalar> HpdCache<T> {
    /// The encoded tensor fed to the 1x1 convolution.
    pub fn encoded(&self) -> &Tensor4<T> {
        &self.conv_input
    }

    pub fn fuse(&self) -> &FuseCache {
        &self.fuse
    }
}

pub fn hpd_forward<T: Scalar>(
    x: &Tensor4<T>,
    p: &mut HpdParams<T>,
    k: usize,
    training: bool,
) -> Result<(Tensor4<T>, HpdCache<T>)> {
    if x.shape()[1] != p.c_in() {
        return Err(Error::Shape(format!(
            "hpd expects {} channels ({} fusion), got {}",
            p.c_in(),
            p.fusion,
            x.shape()[1]
        )));
    }
    let (conv_input, fuse) = match p.fusion {
        Fusion::Sum => minmax_fuse(x, k)?,
        Fusion::Concat => minmax_concat(x, k)?,
    };
    let z = conv1x1_forward(&conv_input, &p.conv)?;
    let (pre_relu, bn) = batchnorm_forward(&z, &mut p.bn, training)?;
    let y = relu(&pre_relu);
    Ok((
        y,
        HpdCache {
            fusion: p.fusion,
            fuse,
            conv_input,
            bn,
            pre_relu,
        },
    ))
}

/// Returns `(grad_x, grads)`; `grads` mirrors `p` with gradients in place of
/// weights (running statistics are zero).
pub fn hpd_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    p: &HpdParams<T>,
    cache: &HpdCache<T>,
) -> Result<(Tensor4<T>, HpdParams<T>)> {
    if !cache.bn.is_training() {
        return Err(Error::Usage("hpd backward needs a training-mode forward cache".into()));
    }
    if grad_out.shape() != cache.pre_relu.shape() {
        return Err(Error::Usage(format!(
            "hpd backward: grad {:?} does not match cached output {:?}",
            grad_out.shape(),
            cache.pre_relu.shape()
        )));
    }
    if p.fusion != cache.fusion || p.conv.c_in() != cache.conv_input.shape()[1] {
        return Err(Error::Usage("hpd backward: parameters do not match the cache".into()));
    }
    let g = relu_backward(grad_out, &cache.pre_relu)?;
    let (g, bn_grads) = batchnorm_backward(&g, &cache.bn)?;
    let (g, conv_grads) = conv1x1_backward(&g, &cache.conv_input, &p.conv)?;
    let gx = match cache.fusion {
        Fusion::Sum => minmax_fuse_backward(&g, &cache.fuse)?,
        Fusion::Concat => minmax_concat_backward(&g, &cache.fuse)?,
    };
    Ok((
        gx,
        HpdParams {
            conv: conv_grads,
            bn: bn_grads,
            fusion: p.fusion,
        },
    ))
}
