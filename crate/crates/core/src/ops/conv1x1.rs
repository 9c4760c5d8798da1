use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, Scalar, Tensor4, Trans};

use super::fan_in_uniform;

/// Pointwise convolution: a `c_out x c_in` channel-mixing matrix plus bias.
///
/// `weight` has shape `(c_out, c_in, 1, 1)` and `bias` has shape
/// `(c_out, 1, 1, 1)`. The same struct carries gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1Params<T> {
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
}

impl<T: Scalar> Conv1x1Params<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            weight: Tensor4::zeros([c_out, c_in, 1, 1])?,
            bias: Tensor4::zeros([c_out, 1, 1, 1])?,
        })
    }

    /// Fan-in scaled uniform weights, zero bias.
    pub fn init(c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            weight: fan_in_uniform(rng, [c_out, c_in, 1, 1], c_in)?,
            bias: Tensor4::zeros([c_out, 1, 1, 1])?,
        })
    }

    pub fn from_parts(weight: Vec<T>, bias: Vec<T>, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            weight: Tensor4::from_vec([c_out, c_in, 1, 1], weight)?,
            bias: Tensor4::from_vec([c_out, 1, 1, 1], bias)?,
        })
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

pub fn conv1x1_forward<T: Scalar>(x: &Tensor4<T>, p: &Conv1x1Params<T>) -> Result<Tensor4<T>> {
    let (n, c, h, w) = x.dims();
    if c != p.c_in() {
        return Err(Error::Shape(format!(
            "conv1x1 expects {} input channels, got {c}",
            p.c_in()
        )));
    }
    let (c_out, hw) = (p.c_out(), h * w);
    let mut out = Tensor4::zeros([n, c_out, h, w])?;
    for i in 0..n {
        let dst = out.sample_mut(i);
        for (o, row) in dst.chunks_exact_mut(hw).enumerate() {
            row.fill(p.bias.data()[o]);
        }
        gemm(c_out, c, hw, p.weight.data(), Trans::No, x.sample(i), Trans::No, T::one(), dst);
    }
    Ok(out)
}

/// Returns `(grad_x, grads)` where `grads` holds the weight and bias gradients.
pub fn conv1x1_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    x: &Tensor4<T>,
    p: &Conv1x1Params<T>,
) -> Result<(Tensor4<T>, Conv1x1Params<T>)> {
    let (n, c, h, w) = x.dims();
    if c != p.c_in() || grad_out.shape() != [n, p.c_out(), h, w] {
        return Err(Error::Shape(format!(
            "conv1x1_backward: x {:?}, grad {:?}, weight {:?}",
            x.shape(),
            grad_out.shape(),
            p.weight.shape()
        )));
    }
    let (c_out, hw) = (p.c_out(), h * w);
    let mut gx = Tensor4::zeros(x.shape())?;
    let mut grads = Conv1x1Params::zeros(c, c_out)?;
    let mut gb = vec![0.0f64; c_out];
    for i in 0..n {
        let g = grad_out.sample(i);
        gemm(c_out, hw, c, g, Trans::No, x.sample(i), Trans::Yes, T::one(), grads.weight.data_mut());
        gemm(c, c_out, hw, p.weight.data(), Trans::Yes, g, Trans::No, T::zero(), gx.sample_mut(i));
        for (o, row) in g.chunks_exact(hw).enumerate() {
            gb[o] += row.iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    for (dst, s) in grads.bias.data_mut().iter_mut().zip(gb) {
        *dst = T::of_f64(s);
    }
    Ok((gx, grads))
}
