//! Dense rank-4 tensors in NCHW layout.
//!
//! Element `(i, j, y, x)` of a tensor with shape `(n, c, h, w)` lives at flat
//! offset `((i * c + j) * h + y) * w + x`. There are no views or strides: every
//! tensor owns a contiguous buffer in exactly this order.

use std::fmt::Debug;

use num_traits::Float;
use rand::distr::uniform::SampleUniform;

use crate::error::{Error, Result};

/// `(n, c, h, w)` extents.
pub type Shape4 = [usize; 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    /// Code used by the on-disk tensor container.
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Real scalar types a [`Tensor4`] can hold.
pub trait Scalar:
    Float + SampleUniform + Default + Debug + Send + Sync + 'static
{
    const DTYPE: DType;

    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// `bytes` must hold exactly `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// Raw strided GEMM: `c = alpha * a * b + beta * c`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Whether a GEMM operand is read as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Trans {
    No,
    Yes,
}

/// `c = a * b + beta * c` over row-major buffers, where `a` is logically
/// `m x k` and `b` is `k x n` after the requested transposition.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: Trans,
    b: &[T],
    tb: Trans,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Trans::No => (k as isize, 1),
        Trans::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::No => (n as isize, 1),
        Trans::Yes => (1, k as isize),
    };
    // SAFETY: lengths checked above, strides describe those buffers, and `c`
    // is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

fn checked_numel(shape: Shape4) -> Result<usize> {
    if shape.iter().any(|&e| e == 0) {
        return Err(Error::Construction(format!("zero extent in {shape:?}")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Construction(format!("extents {shape:?} overflow")))
}

impl<T: Scalar> Tensor4<T> {
    /// Tensor of `shape` with every element equal to `fill`.
    pub fn new(shape: Shape4, fill: T) -> Result<Self> {
        let numel = checked_numel(shape)?;
        Ok(Self {
            shape,
            data: vec![fill; numel],
        })
    }

    pub fn zeros(shape: Shape4) -> Result<Self> {
        Self::new(shape, T::zero())
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        let numel = checked_numel(shape)?;
        if data.len() != numel {
            return Err(Error::Construction(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Like [`Tensor4::zeros`] for shapes already known to be valid.
    pub(crate) fn zeros_like_shape(shape: Shape4) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let [n, c, h, w] = self.shape;
        (n, c, h, w)
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn offset(&self, i: usize, j: usize, y: usize, x: usize) -> usize {
        let [_, c, h, w] = self.shape;
        ((i * c + j) * h + y) * w + x
    }

    /// Inverse of [`Tensor4::offset`].
    pub fn index_of(&self, offset: usize) -> (usize, usize, usize, usize) {
        let [_, c, h, w] = self.shape;
        let x = offset % w;
        let rest = offset / w;
        let y = rest % h;
        let rest = rest / h;
        (rest / c, rest % c, y, x)
    }

    pub fn get(&self, i: usize, j: usize, y: usize, x: usize) -> T {
        self.data[self.offset(i, j, y, x)]
    }

    pub fn set(&mut self, i: usize, j: usize, y: usize, x: usize, v: T) {
        let o = self.offset(i, j, y, x);
        self.data[o] = v;
    }

    /// The `h * w` spatial plane of sample `i`, channel `j`.
    pub fn plane(&self, i: usize, j: usize) -> &[T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (i * self.shape[1] + j) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, i: usize, j: usize) -> &mut [T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (i * self.shape[1] + j) * hw;
        &mut self.data[start..start + hw]
    }

    /// All channels of sample `i` as one `c * h * w` slice.
    pub fn sample(&self, i: usize) -> &[T] {
        let chw = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[i * chw..(i + 1) * chw]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let chw = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[i * chw..(i + 1) * chw]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map2(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "map2 operands {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.map2(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.map2(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.map2(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add_assign operands {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Sum in f64, in storage order.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }

    pub fn reshape(self, shape: Shape4) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Stack samples along the batch axis. All inputs must share `(c, h, w)`.
    pub fn stack(samples: &[&Self]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Argument("stack of zero tensors".into()))?;
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for s in samples {
            if s.shape[1..] != first.shape[1..] {
                return Err(Error::Shape(format!(
                    "stack: {:?} vs {:?}",
                    s.shape, first.shape
                )));
            }
            n += s.shape[0];
            data.extend_from_slice(&s.data);
        }
        Self::from_vec([n, c, h, w], data)
    }
}

/// `map2(a, b, f)` as a free function.
pub fn map2<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>, f: impl Fn(T, T) -> T) -> Result<Tensor4<T>> {
    a.map2(b, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_fills() {
        let t = Tensor4::<f32>::new([1, 1, 2, 2], 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);

        let t = Tensor4::<f32>::new([2, 3, 4, 4], 1.0).unwrap();
        assert_eq!(t.len(), 96);
        assert_eq!(t.sum(), 96.0);

        let t = Tensor4::<f64>::new([1, 1, 1, 1], -2.5).unwrap();
        assert_eq!(t.data(), &[-2.5]);
        assert_eq!(t.dtype(), DType::F64);
    }

    #[test]
    fn new_rejects_bad_extents() {
        assert!(matches!(
            Tensor4::<f32>::new([1, 0, 2, 2], 0.0),
            Err(Error::Construction(_))
        ));
        assert!(matches!(
            Tensor4::<f32>::new([usize::MAX, 2, 2, 2], 0.0),
            Err(Error::Construction(_))
        ));
        assert!(Tensor4::<f32>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn map2_basics() {
        let a = Tensor4::from_vec([1, 1, 1, 2], vec![1.0f64, 2.0]).unwrap();
        let b = Tensor4::from_vec([1, 1, 1, 2], vec![3.0f64, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert!(a.sub(&a).unwrap().data().iter().all(|&v| v == 0.0));
        let ones = Tensor4::new([1, 1, 1, 2], 1.0).unwrap();
        assert_eq!(a.mul(&ones).unwrap(), a);

        let c = Tensor4::new([1, 1, 2, 1], 1.0).unwrap();
        assert!(matches!(a.add(&c), Err(Error::Shape(_))));
    }

    #[test]
    fn offset_matches_layout() {
        let t = Tensor4::<f32>::zeros([2, 3, 4, 5]).unwrap();
        assert_eq!(t.offset(1, 2, 3, 4), t.len() - 1);
        assert_eq!(t.offset(0, 1, 0, 0), 20);
        assert_eq!(t.index_of(t.offset(1, 0, 2, 3)), (1, 0, 2, 3));
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2,3],[4,5,6]] (2x3), b = [[1,0],[0,1],[1,1]] (3x2)
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, Trans::No, &b, Trans::No, 0.0, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);

        // a^T stored as 3x2, b^T stored as 2x3
        let at = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0f64, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [1.0; 4];
        gemm(2, 3, 2, &at, Trans::Yes, &bt, Trans::Yes, 1.0, &mut c2);
        assert_eq!(c2, [5.0, 6.0, 11.0, 12.0]);
    }
}
