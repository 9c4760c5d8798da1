//! Seeded random numbers.
//!
//! Backed by ChaCha8, whose output stream is fixed by its specification and
//! identical on every platform. Independent sub-streams come from ChaCha's
//! 64-bit stream selector, so per-sample or per-tensor generators can be
//! derived from one seed without depending on call order.

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Generator for sub-stream `stream` of this generator's seed. Does not
    /// depend on how much of `self` has been consumed.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self {
            seed: self.seed,
            inner,
        }
    }

    /// Sub-stream keyed by a name, e.g. a parameter tensor's path.
    pub fn fork_named(&self, name: &str) -> Self {
        self.fork(stream_id(name))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }

    /// Uniform in `[lo, hi)`; caller guarantees `lo < hi`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// FNV-1a of `name`, used as a ChaCha stream selector.
pub fn stream_id(name: &str) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    h.write(name.as_bytes());
    h.finish()
}

/// Tensor with elements drawn uniformly from `[lo, hi)`.
pub fn rng_uniform<T: Scalar>(rng: &mut Rng, shape: Shape4, lo: T, hi: T) -> Result<Tensor4<T>> {
    // `!(lo < hi)` also rejects NaN bounds.
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Argument(format!(
            "uniform bounds need lo < hi, got [{lo:?}, {hi:?})"
        )));
    }
    let dist = Uniform::new(lo, hi).map_err(|e| Error::Argument(e.to_string()))?;
    let mut t = Tensor4::zeros(shape)?;
    for v in t.data_mut() {
        *v = dist.sample(&mut rng.inner);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_range_and_determinism() {
        let a: Tensor4<f32> = rng_uniform(&mut Rng::new(42), [1, 1, 2, 2], 0.0, 1.0).unwrap();
        assert!(a.data().iter().all(|&v| (0.0..1.0).contains(&v)));
        let b: Tensor4<f32> = rng_uniform(&mut Rng::new(42), [1, 1, 2, 2], 0.0, 1.0).unwrap();
        assert_eq!(a, b);
        let c: Tensor4<f32> = rng_uniform(&mut Rng::new(43), [1, 1, 2, 2], 0.0, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_rejects_empty_interval() {
        let mut r = Rng::new(1);
        assert!(matches!(
            rng_uniform::<f64>(&mut r, [1, 1, 1, 1], 1.0, 1.0),
            Err(Error::Argument(_))
        ));
        assert!(rng_uniform::<f64>(&mut r, [1, 1, 1, 1], 2.0, 1.0).is_err());
    }

    #[test]
    fn streams_match_for_equal_seeds() {
        let mut a = Rng::new(9);
        let mut b = Rng::new(9);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn fork_ignores_parent_position() {
        let parent = Rng::new(5);
        let mut used = Rng::new(5);
        used.next_u64();
        let mut f1 = parent.fork(3);
        let mut f2 = used.fork(3);
        assert_eq!(f1.next_u64(), f2.next_u64());
        assert_ne!(parent.fork(3).next_u64(), parent.fork(4).next_u64());
    }

    #[test]
    fn chacha8_known_first_word() {
        // Pins the generator so a dependency bump that changes the stream is caught.
        let mut r = Rng::new(0);
        assert_eq!(r.next_u64(), 0xb585_f767_a79a_3b6c);
        assert_eq!(stream_id("a"), 0xaf63dc4c8601ec8c);
    }
}
