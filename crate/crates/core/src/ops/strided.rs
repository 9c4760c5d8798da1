//! Fixed 2x2, stride-2 convolution used as a baseline downsampler.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor4};

use super::fan_in_uniform;

/// `weight` has shape `(c_out, c_in, 2, 2)`, `bias` has shape `(c_out, 1, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StridedConvParams<T> {
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
}

impl<T: Scalar> StridedConvParams<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            weight: Tensor4::zeros([c_out, c_in, 2, 2])?,
            bias: Tensor4::zeros([c_out, 1, 1, 1])?,
        })
    }

    pub fn init(c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            weight: fan_in_uniform(rng, [c_out, c_in, 2, 2], c_in * 4)?,
            bias: Tensor4::zeros([c_out, 1, 1, 1])?,
        })
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

fn check<T: Scalar>(x: &Tensor4<T>, p: &StridedConvParams<T>) -> Result<()> {
    let (_, c, h, w) = x.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("strided conv needs even extents, got {h}x{w}")));
    }
    if c != p.c_in() {
        return Err(Error::Shape(format!(
            "strided conv expects {} channels, got {c}",
            p.c_in()
        )));
    }
    Ok(())
}

/// Cross-correlation with a 2x2 kernel and stride 2. Each output sums
/// `weight * input` over `(channel, dy, dx)` in that order, then adds bias.
pub fn strided_conv_downsample<T: Scalar>(x: &Tensor4<T>, p: &StridedConvParams<T>) -> Result<Tensor4<T>> {
    check(x, p)?;
    let (n, c, h, w) = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let co = p.c_out();
    let wt = p.weight.data();
    let mut out = Tensor4::zeros([n, co, oh, ow])?;
    let mut acc = vec![T::zero(); oh * ow];
    for i in 0..n {
        for o in 0..co {
            acc.fill(T::zero());
            for j in 0..c {
                let src = x.plane(i, j);
                let k = &wt[(o * c + j) * 4..(o * c + j) * 4 + 4];
                for oy in 0..oh {
                    let r0 = &src[2 * oy * w..2 * oy * w + w];
                    let r1 = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
                    let a = &mut acc[oy * ow..(oy + 1) * ow];
                    for ox in 0..ow {
                        a[ox] = a[ox]
                            + k[0] * r0[2 * ox]
                            + k[1] * r0[2 * ox + 1]
                            + k[2] * r1[2 * ox]
                            + k[3] * r1[2 * ox + 1];
                    }
                }
            }
            let b = p.bias.data()[o];
            for (d, &s) in out.plane_mut(i, o).iter_mut().zip(&acc) {
                *d = s + b;
            }
        }
    }
    Ok(out)
}

pub fn strided_conv_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    x: &Tensor4<T>,
    p: &StridedConvParams<T>,
) -> Result<(Tensor4<T>, StridedConvParams<T>)> {
    check(x, p)?;
    let (n, c, h, w) = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let co = p.c_out();
    if grad_out.shape() != [n, co, oh, ow] {
        return Err(Error::Shape(format!(
            "strided conv backward: grad {:?} for input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let wt = p.weight.data();
    let mut gx = Tensor4::zeros(x.shape())?;
    let mut grads = StridedConvParams::zeros(c, co)?;
    for i in 0..n {
        for o in 0..co {
            let g = grad_out.plane(i, o);
            let gb = &mut grads.bias.data_mut()[o];
            *gb = g.iter().fold(*gb, |a, &v| a + v);
            for j in 0..c {
                let base = (o * c + j) * 4;
                let src = x.plane(i, j);
                let mut gw = [T::zero(); 4];
                let dst = gx.plane_mut(i, j);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = g[oy * ow + ox];
                        for (t, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                            let at = (2 * oy + dy) * w + 2 * ox + dx;
                            gw[t] = gw[t] + gv * src[at];
                            dst[at] = dst[at] + gv * wt[base + t];
                        }
                    }
                }
                let gwd = &mut grads.weight.data_mut()[base..base + 4];
                for t in 0..4 {
                    gwd[t] = gwd[t] + gw[t];
                }
            }
        }
    }
    Ok((gx, grads))
}
