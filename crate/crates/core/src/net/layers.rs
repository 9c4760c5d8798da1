//! 3x3 convolution blocks and nearest-neighbour upsampling.

use crate::error::{Error, Result};
use crate::ops::{batchnorm_backward, batchnorm_forward, fan_in_uniform, relu, relu_backward, BatchNormParams, BnCache};
use crate::rng::Rng;
use crate::tensor::{gemm, Scalar, Tensor4, Trans};

/// Bias-free 3x3 convolution, stride 1, zero padding 1. `weight` has shape
/// `(c_out, c_in, 3, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3Params<T> {
    pub weight: Tensor4<T>,
}

impl<T: Scalar> Conv3x3Params<T> {
    pub fn init(c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            weight: fan_in_uniform(rng, [c_out, c_in, 3, 3], c_in * 9)?,
        })
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Unfold one sample `(c, h, w)` into a `(c * 9) x (h * w)` patch matrix.
fn im2col<T: Scalar>(src: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for j in 0..c {
        let plane = &src[j * hw..(j + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((j * 9) + ky * 3 + kx) * hw..][..hw];
                let (x_lo, x_hi) = (usize::from(kx == 0), if kx == 2 { w - 1 } else { w });
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    dst[..x_lo].fill(T::zero());
                    dst[x_hi..].fill(T::zero());
                    // dst[x] = srow[x + kx - 1]
                    dst[x_lo..x_hi].copy_from_slice(&srow[x_lo + kx - 1..x_hi + kx - 1]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate patch gradients back onto the image.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dst: &mut [T]) {
    let hw = h * w;
    for j in 0..c {
        let plane = &mut dst[j * hw..(j + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((j * 9) + ky * 3 + kx) * hw..][..hw];
                let (x_lo, x_hi) = (usize::from(kx == 0), if kx == 2 { w - 1 } else { w });
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let prow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for x in x_lo..x_hi {
                        prow[x + kx - 1] = prow[x + kx - 1] + src[x];
                    }
                }
            }
        }
    }
}

pub fn conv3x3_forward<T: Scalar>(x: &Tensor4<T>, p: &Conv3x3Params<T>) -> Result<Tensor4<T>> {
    let (n, c, h, w) = x.dims();
    if c != p.c_in() {
        return Err(Error::Shape(format!(
            "conv3x3 expects {} channels, got {c}",
            p.c_in()
        )));
    }
    let co = p.c_out();
    let hw = h * w;
    let mut out = Tensor4::zeros([n, co, h, w])?;
    let mut cols = vec![T::zero(); c * 9 * hw];
    for i in 0..n {
        im2col(x.sample(i), c, h, w, &mut cols);
        gemm(co, c * 9, hw, p.weight.data(), Trans::No, &cols, Trans::No, T::zero(), out.sample_mut(i));
    }
    Ok(out)
}

pub fn conv3x3_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    x: &Tensor4<T>,
    p: &Conv3x3Params<T>,
) -> Result<(Tensor4<T>, Conv3x3Params<T>)> {
    let (n, c, h, w) = x.dims();
    let co = p.c_out();
    if c != p.c_in() || grad_out.shape() != [n, co, h, w] {
        return Err(Error::Shape(format!(
            "conv3x3_backward: x {:?}, grad {:?}, weight {:?}",
            x.shape(),
            grad_out.shape(),
            p.weight.shape()
        )));
    }
    let hw = h * w;
    let mut gx = Tensor4::zeros(x.shape())?;
    let mut gw = Tensor4::zeros(p.weight.shape())?;
    let mut cols = vec![T::zero(); c * 9 * hw];
    for i in 0..n {
        let g = grad_out.sample(i);
        im2col(x.sample(i), c, h, w, &mut cols);
        gemm(co, hw, c * 9, g, Trans::No, &cols, Trans::Yes, T::one(), gw.data_mut());
        gemm(c * 9, co, hw, p.weight.data(), Trans::Yes, g, Trans::No, T::zero(), &mut cols);
        col2im(&cols, c, h, w, gx.sample_mut(i));
    }
    Ok((gx, Conv3x3Params { weight: gw }))
}

/// Conv3x3 -> batch norm -> ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBnRelu<T> {
    pub conv: Conv3x3Params<T>,
    pub bn: BatchNormParams<T>,
}

#[derive(Debug, Clone)]
pub struct ConvBnReluCache<T> {
    input: Tensor4<T>,
    bn: BnCache<T>,
    pre_relu: Tensor4<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn init(c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            conv: Conv3x3Params::init(c_in, c_out, rng)?,
            bn: BatchNormParams::new(c_out)?,
        })
    }

    pub fn forward(&mut self, x: Tensor4<T>, training: bool) -> Result<(Tensor4<T>, ConvBnReluCache<T>)> {
        let z = conv3x3_forward(&x, &self.conv)?;
        let (pre_relu, bn) = batchnorm_forward(&z, &mut self.bn, training)?;
        let y = relu(&pre_relu);
        Ok((
            y,
            ConvBnReluCache {
                input: x,
                bn,
                pre_relu,
            },
        ))
    }

    pub fn backward(&self, grad: &Tensor4<T>, cache: &ConvBnReluCache<T>) -> Result<(Tensor4<T>, Self)> {
        let g = relu_backward(grad, &cache.pre_relu)?;
        let (g, bn) = batchnorm_backward(&g, &cache.bn)?;
        let (gx, conv) = conv3x3_backward(&g, &cache.input, &self.conv)?;
        Ok((gx, Self { conv, bn }))
    }
}

/// Two [`ConvBnRelu`] layers; the first changes the channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub first: ConvBnRelu<T>,
    pub second: ConvBnRelu<T>,
}

pub type ConvBlockCache<T> = (ConvBnReluCache<T>, ConvBnReluCache<T>);

impl<T: Scalar> ConvBlock<T> {
    pub fn forward(&mut self, x: Tensor4<T>, training: bool) -> Result<(Tensor4<T>, ConvBlockCache<T>)> {
        let (h, c1) = self.first.forward(x, training)?;
        let (y, c2) = self.second.forward(h, training)?;
        Ok((y, (c1, c2)))
    }

    pub fn backward(&self, grad: &Tensor4<T>, cache: &ConvBlockCache<T>) -> Result<(Tensor4<T>, Self)> {
        let (g, second) = self.second.backward(grad, &cache.1)?;
        let (g, first) = self.first.backward(&g, &cache.0)?;
        Ok((g, Self { first, second }))
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2x<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let (n, c, h, w) = x.dims();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor4::zeros_like_shape([n, c, oh, ow]);
    for i in 0..n {
        for j in 0..c {
            let src = x.plane(i, j);
            let dst = out.plane_mut(i, j);
            for y in 0..oh {
                let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
                let drow = &mut dst[y * ow..(y + 1) * ow];
                for (xx, d) in drow.iter_mut().enumerate() {
                    *d = srow[xx / 2];
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x`]: sums each 2x2 block.
pub fn upsample2x_backward<T: Scalar>(grad: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (n, c, h, w) = grad.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("upsample backward needs even extents, got {h}x{w}")));
    }
    let (ih, iw) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, ih, iw])?;
    for i in 0..n {
        for j in 0..c {
            let src = grad.plane(i, j);
            let dst = out.plane_mut(i, j);
            for y in 0..h {
                for x in 0..w {
                    let d = &mut dst[(y / 2) * iw + x / 2];
                    *d = *d + src[y * w + x];
                }
            }
        }
    }
    Ok(out)
}
