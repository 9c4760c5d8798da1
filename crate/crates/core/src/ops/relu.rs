use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` where `x > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor4<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
    if grad_out.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "relu_backward: grad {:?} vs input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    grad_out.map2(x, |g, v| if v > T::zero() { g } else { T::zero() })
}
