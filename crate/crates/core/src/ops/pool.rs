//! Non-overlapping `k x k` min, max and average pooling.
//!
//! The min/max kernels walk each output row once per window offset
//! `(dy, dx)`, keeping a running best and its source offset for every output
//! cell in the row. The inner loop is a compare-and-select with no
//! data-dependent branch, so it auto-vectorizes. Because the offsets are
//! visited in row-major order and only a strictly better value replaces the
//! running best, ties resolve to the first element of the window in
//! row-major order.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Min,
    Max,
}

/// What to do when a spatial extent is not a multiple of the window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Padding {
    /// Reject the input with a shape error.
    #[default]
    Strict,
    /// Pad the bottom/right edge with a sentinel that never wins the
    /// comparison (`+inf` for min, `-inf` for max); output extents round up.
    Sentinel,
}

/// Argmin/argmax source of every pooled cell, as an offset inside the cell's
/// own `h x w` input plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    shape: Shape4,
    input_shape: Shape4,
    k: usize,
    idx: Vec<usize>,
}

impl PoolIndices {
    /// Shape of the pooled output these indices belong to.
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn input_shape(&self) -> Shape4 {
        self.input_shape
    }

    pub fn window(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.idx
    }
}

fn pooled_extent(extent: usize, k: usize, padding: Padding) -> Result<usize> {
    match padding {
        Padding::Strict if extent % k != 0 => Err(Error::Shape(format!(
            "extent {extent} is not divisible by window {k}"
        ))),
        Padding::Strict => Ok(extent / k),
        Padding::Sentinel => Ok(extent.div_ceil(k)),
    }
}

fn check_window(k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::Argument("pooling window must be >= 1".into()));
    }
    Ok(())
}

pub fn min_pool2d<T: Scalar>(x: &Tensor4<T>, k: usize) -> Result<(Tensor4<T>, PoolIndices)> {
    pool2d(x, k, PoolKind::Min, Padding::Strict)
}

pub fn max_pool2d<T: Scalar>(x: &Tensor4<T>, k: usize) -> Result<(Tensor4<T>, PoolIndices)> {
    pool2d(x, k, PoolKind::Max, Padding::Strict)
}

pub fn pool2d<T: Scalar>(
    x: &Tensor4<T>,
    k: usize,
    kind: PoolKind,
    padding: Padding,
) -> Result<(Tensor4<T>, PoolIndices)> {
    check_window(k)?;
    let (n, c, h, w) = x.dims();
    let oh = pooled_extent(h, k, padding)?;
    let ow = pooled_extent(w, k, padding)?;
    let out_shape = [n, c, oh, ow];
    let mut out = Tensor4::zeros_like_shape(out_shape);
    let mut idx = vec![0usize; n * c * oh * ow];
    let exact = h % k == 0 && w % k == 0;
    for i in 0..n {
        for j in 0..c {
            let plane = x.plane(i, j);
            let o = (i * c + j) * oh * ow;
            let dst = &mut out.plane_mut(i, j)[..];
            let dst_idx = &mut idx[o..o + oh * ow];
            match (kind, exact) {
                (PoolKind::Min, true) => scan_plane(plane, w, k, dst, dst_idx, |v, b| v < b),
                (PoolKind::Max, true) => scan_plane(plane, w, k, dst, dst_idx, |v, b| v > b),
                (PoolKind::Min, false) => scan_plane_clipped(plane, h, w, k, dst, dst_idx, |v, b| v < b),
                (PoolKind::Max, false) => scan_plane_clipped(plane, h, w, k, dst, dst_idx, |v, b| v > b),
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            shape: out_shape,
            input_shape: x.shape(),
            k,
            idx,
        },
    ))
}

/// Blocked scan of one plane whose extents are multiples of `k`.
#[inline]
fn scan_plane<T: Scalar>(
    src: &[T],
    w: usize,
    k: usize,
    out: &mut [T],
    idx: &mut [usize],
    better: impl Fn(T, T) -> bool,
) {
    let ow = w / k;
    for (oy, (orow, irow)) in out.chunks_exact_mut(ow).zip(idx.chunks_exact_mut(ow)).enumerate() {
        let base = oy * k * w;
        for ox in 0..ow {
            orow[ox] = src[base + ox * k];
            irow[ox] = base + ox * k;
        }
        for dy in 0..k {
            let row_start = base + dy * w;
            let row = &src[row_start..row_start + w];
            for dx in 0..k {
                if dy == 0 && dx == 0 {
                    continue;
                }
                for ox in 0..ow {
                    let v = row[ox * k + dx];
                    let take = better(v, orow[ox]);
                    orow[ox] = if take { v } else { orow[ox] };
                    irow[ox] = if take { row_start + ox * k + dx } else { irow[ox] };
                }
            }
        }
    }
}

/// Scan with edge windows clipped to the plane. Clipping is equivalent to
/// sentinel padding because a sentinel can never be strictly better.
fn scan_plane_clipped<T: Scalar>(
    src: &[T],
    h: usize,
    w: usize,
    k: usize,
    out: &mut [T],
    idx: &mut [usize],
    better: impl Fn(T, T) -> bool,
) {
    let ow = w.div_ceil(k);
    for (cell, (o, ix)) in out.iter_mut().zip(idx.iter_mut()).enumerate() {
        let (oy, ox) = (cell / ow, cell % ow);
        let (y0, x0) = (oy * k, ox * k);
        let mut best = src[y0 * w + x0];
        let mut best_at = y0 * w + x0;
        for y in y0..(y0 + k).min(h) {
            for x in x0..(x0 + k).min(w) {
                let v = src[y * w + x];
                if better(v, best) {
                    best = v;
                    best_at = y * w + x;
                }
            }
        }
        *o = best;
        *ix = best_at;
    }
}

/// Mean over each non-overlapping `k x k` window. Window sums accumulate in
/// row-major order, then divide by `k * k`.
pub fn avg_pool2d<T: Scalar>(x: &Tensor4<T>, k: usize) -> Result<Tensor4<T>> {
    check_window(k)?;
    let (n, c, h, w) = x.dims();
    let oh = pooled_extent(h, k, Padding::Strict)?;
    let ow = pooled_extent(w, k, Padding::Strict)?;
    let mut out = Tensor4::zeros_like_shape([n, c, oh, ow]);
    let area = T::of_f64((k * k) as f64);
    for i in 0..n {
        for j in 0..c {
            let src = x.plane(i, j);
            let dst = out.plane_mut(i, j);
            for (oy, orow) in dst.chunks_exact_mut(ow).enumerate() {
                let base = oy * k * w;
                for dy in 0..k {
                    let row = &src[base + dy * w..base + (dy + 1) * w];
                    for dx in 0..k {
                        for ox in 0..ow {
                            orow[ox] = orow[ox] + row[ox * k + dx];
                        }
                    }
                }
                for v in orow.iter_mut() {
                    *v = *v / area;
                }
            }
        }
    }
    Ok(out)
}

/// Spread each pooled gradient uniformly over its window.
pub fn avg_pool_backward<T: Scalar>(grad_out: &Tensor4<T>, k: usize, input_shape: Shape4) -> Result<Tensor4<T>> {
    check_window(k)?;
    let [n, c, h, w] = input_shape;
    if h % k != 0 || w % k != 0 || grad_out.shape() != [n, c, h / k, w / k] {
        return Err(Error::Shape(format!(
            "avg_pool_backward: grad {:?} does not pool from {input_shape:?} with k={k}",
            grad_out.shape()
        )));
    }
    let area = T::of_f64((k * k) as f64);
    let ow = w / k;
    let mut gx = Tensor4::zeros_like_shape(input_shape);
    for i in 0..n {
        for j in 0..c {
            let g = grad_out.plane(i, j);
            let dst = gx.plane_mut(i, j);
            for y in 0..h {
                for x in 0..w {
                    dst[y * w + x] = g[(y / k) * ow + x / k] / area;
                }
            }
        }
    }
    Ok(gx)
}

/// Route each pooled gradient back to the input element recorded in
/// `indices`, accumulating when several cells select the same element.
pub fn pool_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    indices: &PoolIndices,
    input_shape: Shape4,
) -> Result<Tensor4<T>> {
    let mut gx = Tensor4::zeros(input_shape)?;
    pool_backward_into(grad_out, indices, &mut gx)?;
    Ok(gx)
}

/// Accumulating form of [`pool_backward`]: adds into `grad_in`.
pub fn pool_backward_into<T: Scalar>(
    grad_out: &Tensor4<T>,
    indices: &PoolIndices,
    grad_in: &mut Tensor4<T>,
) -> Result<()> {
    if grad_out.shape() != indices.shape {
        return Err(Error::Shape(format!(
            "pool_backward: grad {:?} vs indices {:?}",
            grad_out.shape(),
            indices.shape
        )));
    }
    if grad_in.shape() != indices.input_shape {
        return Err(Error::Shape(format!(
            "pool_backward: input shape {:?} vs recorded {:?}",
            grad_in.shape(),
            indices.input_shape
        )));
    }
    let [n, c, oh, ow] = indices.shape;
    let cells = oh * ow;
    for i in 0..n {
        for j in 0..c {
            let o = (i * c + j) * cells;
            let g = grad_out.plane(i, j);
            let src = &indices.idx[o..o + cells];
            let dst = grad_in.plane_mut(i, j);
            for (&gv, &at) in g.iter().zip(src) {
                dst[at] = dst[at] + gv;
            }
        }
    }
    Ok(())
}

/// Straightforward nested-loop pooling, kept as the throughput baseline for
/// the blocked kernels.
pub mod naive {
    use super::*;

    pub fn pool2d<T: Scalar>(x: &Tensor4<T>, k: usize, kind: PoolKind) -> Result<(Tensor4<T>, Vec<usize>)> {
        check_window(k)?;
        let (n, c, h, w) = x.dims();
        let (oh, ow) = (pooled_extent(h, k, Padding::Strict)?, pooled_extent(w, k, Padding::Strict)?);
        let mut out = Tensor4::zeros_like_shape([n, c, oh, ow]);
        let mut idx = Vec::with_capacity(n * c * oh * ow);
        for i in 0..n {
            for j in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = x.get(i, j, oy * k, ox * k);
                        let mut at = oy * k * w + ox * k;
                        for y in oy * k..oy * k + k {
                            for xx in ox * k..ox * k + k {
                                let v = x.get(i, j, y, xx);
                                let take = match kind {
                                    PoolKind::Min => v < best,
                                    PoolKind::Max => v > best,
                                };
                                if take {
                                    best = v;
                                    at = y * w + xx;
                                }
                            }
                        }
                        out.set(i, j, oy, ox, best);
                        idx.push(at);
                    }
                }
            }
        }
        Ok((out, idx))
    }

    pub fn avg_pool2d<T: Scalar>(x: &Tensor4<T>, k: usize) -> Result<Tensor4<T>> {
        check_window(k)?;
        let (n, c, h, w) = x.dims();
        let (oh, ow) = (pooled_extent(h, k, Padding::Strict)?, pooled_extent(w, k, Padding::Strict)?);
        let mut out = Tensor4::zeros_like_shape([n, c, oh, ow]);
        let area = T::of_f64((k * k) as f64);
        for i in 0..n {
            for j in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = T::zero();
                        for y in oy * k..oy * k + k {
                            for xx in ox * k..ox * k + k {
                                s = s + x.get(i, j, y, xx);
                            }
                        }
                        out.set(i, j, oy, ox, s / area);
                    }
                }
            }
        }
        Ok(out)
    }
}
