//! Per-channel batch normalization over the `(n, h, w)` axes.
//!
//! Training mode normalizes with the biased batch variance and folds the
//! unbiased variance into the running estimate. Statistics accumulate in f64
//! regardless of the tensor dtype.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Learnable scale/shift plus running statistics, each of shape `(c, 1, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor4<T>,
    pub beta: Tensor4<T>,
    pub running_mean: Tensor4<T>,
    pub running_var: Tensor4<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormParams<T> {
    /// gamma = 1, beta = 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Result<Self> {
        let shape = [channels, 1, 1, 1];
        Ok(Self {
            gamma: Tensor4::new(shape, T::one())?,
            beta: Tensor4::zeros(shape)?,
            running_mean: Tensor4::zeros(shape)?,
            running_var: Tensor4::new(shape, T::one())?,
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        })
    }

    /// All-zero container used to carry gamma/beta gradients.
    pub fn zeros(channels: usize) -> Result<Self> {
        let shape = [channels, 1, 1, 1];
        Ok(Self {
            gamma: Tensor4::zeros(shape)?,
            beta: Tensor4::zeros(shape)?,
            running_mean: Tensor4::zeros(shape)?,
            running_var: Tensor4::zeros(shape)?,
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[0]
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Argument(format!("batch norm eps must be > 0, got {}", self.eps)));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Argument(format!(
                "batch norm momentum must be in (0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// What the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Tensor4<T>,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
    training: bool,
}

impl<T: Scalar> BnCache<T> {
    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Normalized activations before the affine transform.
    pub fn normalized(&self) -> &Tensor4<T> {
        &self.xhat
    }
}

pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor4<T>,
    p: &mut BatchNormParams<T>,
    training: bool,
) -> Result<(Tensor4<T>, BnCache<T>)> {
    p.validate()?;
    let (n, c, h, w) = x.dims();
    if c != p.channels() {
        return Err(Error::Shape(format!(
            "batch norm over {} channels got input with {c}",
            p.channels()
        )));
    }
    let count = n * h * w;
    if training && count < 2 {
        return Err(Error::DegenerateBatch(format!(
            "training-mode batch norm needs >= 2 values per channel, got {count}"
        )));
    }

    let mut xhat = Tensor4::zeros(x.shape())?;
    let mut y = Tensor4::zeros(x.shape())?;
    let mut inv_std = vec![0.0; c];
    let gamma: Vec<f64> = p.gamma.data().iter().map(|v| v.as_f64()).collect();
    for j in 0..c {
        let (mean, var) = if training {
            let mean = (0..n).flat_map(|i| x.plane(i, j)).map(|v| v.as_f64()).sum::<f64>() / count as f64;
            let ss = (0..n)
                .flat_map(|i| x.plane(i, j))
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>();
            let var = ss / count as f64;
            let unbiased = ss / (count - 1) as f64;
            let m = p.momentum;
            let rm = &mut p.running_mean.data_mut()[j];
            *rm = T::of_f64((1.0 - m) * rm.as_f64() + m * mean);
            let rv = &mut p.running_var.data_mut()[j];
            *rv = T::of_f64((1.0 - m) * rv.as_f64() + m * unbiased);
            (mean, var)
        } else {
            (p.running_mean.data()[j].as_f64(), p.running_var.data()[j].as_f64())
        };
        let is = 1.0 / (var + p.eps).sqrt();
        inv_std[j] = is;
        let (g, b) = (gamma[j], p.beta.data()[j].as_f64());
        for i in 0..n {
            let src = x.plane(i, j);
            let xh = xhat.plane_mut(i, j);
            for (d, &s) in xh.iter_mut().zip(src) {
                *d = T::of_f64((s.as_f64() - mean) * is);
            }
            let yp = y.plane_mut(i, j);
            for (d, &s) in yp.iter_mut().zip(src) {
                *d = T::of_f64(g * ((s.as_f64() - mean) * is) + b);
            }
        }
    }
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            gamma,
            training,
        },
    ))
}

/// Full batch-statistics backward. Returns `(grad_x, grads)` with the gamma
/// and beta gradients in `grads`.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    cache: &BnCache<T>,
) -> Result<(Tensor4<T>, BatchNormParams<T>)> {
    if !cache.training {
        return Err(Error::Usage(
            "batch norm backward needs a training-mode forward cache".into(),
        ));
    }
    if grad_out.shape() != cache.xhat.shape() {
        return Err(Error::Shape(format!(
            "batch norm backward: grad {:?} vs cached {:?}",
            grad_out.shape(),
            cache.xhat.shape()
        )));
    }
    let (n, c, h, w) = grad_out.dims();
    let count = (n * h * w) as f64;
    let mut gx = Tensor4::zeros(grad_out.shape())?;
    let mut grads = BatchNormParams::zeros(c)?;
    for j in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for i in 0..n {
            for (&g, &xh) in grad_out.plane(i, j).iter().zip(cache.xhat.plane(i, j)) {
                sum_g += g.as_f64();
                sum_gx += g.as_f64() * xh.as_f64();
            }
        }
        grads.beta.data_mut()[j] = T::of_f64(sum_g);
        grads.gamma.data_mut()[j] = T::of_f64(sum_gx);
        let scale = cache.gamma[j] * cache.inv_std[j] / count;
        for i in 0..n {
            let g = grad_out.plane(i, j);
            let xh = cache.xhat.plane(i, j);
            for ((d, &gv), &xv) in gx.plane_mut(i, j).iter_mut().zip(g).zip(xh) {
                *d = T::of_f64(scale * (count * gv.as_f64() - sum_g - xv.as_f64() * sum_gx));
            }
        }
    }
    Ok((gx, grads))
}
