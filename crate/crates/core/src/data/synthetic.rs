use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor4;

use super::{LabelMap, SegSample};

/// Mean image intensity of each region before noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intensities {
    pub background: f64,
    pub ellipse: f64,
    pub ring: f64,
    pub blob: f64,
}

pub const INTENSITIES: Intensities = Intensities {
    background: 0.1,
    ellipse: 0.8,
    ring: 0.5,
    blob: 0.35,
};

const NOISE_SIGMA: f64 = 0.05;
const MIN_SIZE: usize = 32;
const BLOB_ATTEMPTS: usize = 10_000;

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Normalized radius; `<= 1` inside.
    fn radius(&self, px: f64, py: f64, grow: f64) -> f64 {
        let (dx, dy) = (px - self.cx, py - self.cy);
        let u = (dx * self.cos + dy * self.sin) / (self.a + grow);
        let v = (-dx * self.sin + dy * self.cos) / (self.b + grow);
        u * u + v * v
    }
}

fn sample_one(rng: &mut Rng, size: usize, classes: usize, id: String) -> Result<SegSample> {
    let s = size as f64;
    let ellipse = {
        let theta = rng.uniform(0.0, PI);
        Ellipse {
            cx: rng.uniform(0.4, 0.6) * s,
            cy: rng.uniform(0.4, 0.6) * s,
            a: rng.uniform(0.14, 0.26) * s,
            b: rng.uniform(0.14, 0.26) * s,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    };
    let ring = if classes >= 3 { rng.uniform(2.0, 4.0) } else { 0.0 };

    let mut labels = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            labels[y * size + x] = if ellipse.radius(px, py, 0.0) <= 1.0 {
                1
            } else if classes >= 3 && ellipse.radius(px, py, ring) <= 1.0 {
                2
            } else {
                0
            };
        }
    }

    if classes >= 4 {
        let diameter = 3 + rng.below(3);
        let r = diameter as f64 / 2.0;
        let margin = ring + 2.0;
        let mut placed = false;
        for _ in 0..BLOB_ATTEMPTS {
            // Odd diameters centre on a pixel, even ones on a pixel corner,
            // so the disc spans exactly `diameter` pixels per axis.
            let snap = |v: f64| if diameter % 2 == 1 { v.floor() + 0.5 } else { v.round() };
            let bx = snap(rng.uniform(r + 1.0, s - r - 1.0));
            let by = snap(rng.uniform(r + 1.0, s - r - 1.0));
            let disk: Vec<usize> = (0..size * size)
                .filter(|&i| {
                    let (px, py) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
                    (px - bx).powi(2) + (py - by).powi(2) <= r * r
                })
                .collect();
            let clear = disk.iter().all(|&i| {
                let (px, py) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
                ellipse.radius(px, py, margin) > 1.0
            });
            if clear && !disk.is_empty() {
                for i in disk {
                    labels[i] = 3;
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!("no room for the small blob in a {size}x{size} image")));
        }
    }

    let mut image = Vec::with_capacity(size * size);
    for &l in &labels {
        let mean = match l {
            0 => INTENSITIES.background,
            1 => INTENSITIES.ellipse,
            2 => INTENSITIES.ring,
            _ => INTENSITIES.blob,
        };
        image.push((mean + NOISE_SIGMA * rng.normal()).clamp(0.0, 1.0) as f32);
    }
    SegSample::new(
        id,
        Tensor4::from_vec([1, 1, size, size], image)?,
        LabelMap::new(1, size, size, labels)?,
    )
}

/// `n` square samples of side `size`. Sample `i` depends only on
/// `(seed, i)`.
///
/// Class 1 is a large ellipse, class 2 a thin ring around it (when
/// `classes >= 3`), class 3 a small disc of 3 to 5 pixels diameter in the
/// background (when `classes >= 4`). Higher classes never appear.
pub fn gen_synthetic(seed: u64, n: usize, size: usize, classes: usize) -> Result<Vec<SegSample>> {
    if size < MIN_SIZE {
        return Err(Error::Config(format!("image size must be >= {MIN_SIZE}, got {size}")));
    }
    if !(2..=256).contains(&classes) {
        return Err(Error::Config(format!("classes must be in 2..=256, got {classes}")));
    }
    let root = Rng::new(seed);
    (0..n)
        .map(|i| sample_one(&mut root.fork(i as u64), size, classes, format!("{i:05}")))
        .collect()
}

/// Predict class 1 wherever the intensity exceeds `threshold`, else 0.
pub fn threshold_predict(image: &Tensor4<f32>, threshold: f32) -> Result<LabelMap> {
    let (n, c, h, w) = image.dims();
    if c != 1 {
        return Err(Error::Shape(format!("expected a grayscale image, got {c} channels")));
    }
    let data = image.data().iter().map(|&v| u8::from(v > threshold)).collect();
    LabelMap::new(n, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_order_independent() {
        let a = gen_synthetic(42, 5, 32, 4).unwrap();
        let b = gen_synthetic(42, 5, 32, 4).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(42, 3, 32, 4).unwrap();
        assert_eq!(&a[..3], &c[..]);
        assert_ne!(a, gen_synthetic(43, 5, 32, 4).unwrap());
    }

    #[test]
    fn classes_present() {
        for s in gen_synthetic(1, 20, 64, 4).unwrap() {
            let mut seen = [false; 4];
            for &l in s.labels.as_slice() {
                seen[l as usize] = true;
            }
            assert_eq!(seen, [true; 4], "{}", s.id);
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        for s in gen_synthetic(1, 5, 32, 2).unwrap() {
            assert!(s.labels.max_label() == 1);
        }
    }

    #[test]
    fn blob_diameter_bounded() {
        for s in gen_synthetic(3, 30, 64, 4).unwrap() {
            let (w, lbl) = (s.labels.width(), s.labels.as_slice());
            let px: Vec<usize> = (0..lbl.len()).filter(|&i| lbl[i] == 3).collect();
            let xs = px.iter().map(|i| i % w);
            let ys = px.iter().map(|i| i / w);
            let span_x = xs.clone().max().unwrap() - xs.min().unwrap() + 1;
            let span_y = ys.clone().max().unwrap() - ys.min().unwrap() + 1;
            assert_eq!(span_x, span_y);
            assert!((3..=5).contains(&span_x), "diameter {span_x}");
            // 3x3 square, 4x4 and 5x5 with corners cut
            let expected = [9, 12, 21][span_x - 3];
            assert_eq!(px.len(), expected);
        }
    }

    #[test]
    fn bad_geometry_rejected() {
        assert!(matches!(gen_synthetic(0, 1, 8, 4), Err(Error::Config(_))));
        assert!(matches!(gen_synthetic(0, 1, 16, 4), Err(Error::Config(_))));
        assert!(matches!(gen_synthetic(0, 1, 32, 1), Err(Error::Config(_))));
    }

    #[test]
    fn blob_always_fits_at_minimum_size() {
        for seed in 0..5 {
            assert_eq!(gen_synthetic(seed, 400, MIN_SIZE, 4).unwrap().len(), 400);
        }
    }
}
