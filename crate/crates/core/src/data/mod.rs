//! Synthetic segmentation data, the `.hpdt` tensor container and overlay
//! images.

mod container;
mod overlay;
mod store;
mod synthetic;

pub use container::{decode_tensor, encode_tensor, load_tensor, save_tensor, HEADER_LEN, MAGIC, VERSION};
pub use overlay::{contour_mask, emit_overlay, render_overlay, GT_PALETTE, PRED_PALETTE};
pub use store::{load_checkpoint, read_dataset, save_checkpoint, write_dataset};
pub use synthetic::{gen_synthetic, threshold_predict, Intensities, INTENSITIES};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Integer class labels of shape `(n, h, w)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::Construction(format!("zero extent in label map {n}x{h}x{w}")));
        }
        if data.len() != n * h * w {
            return Err(Error::Construction(format!(
                "label map {n}x{h}x{w} needs {} labels, got {}",
                n * h * w,
                data.len()
            )));
        }
        Ok(Self { n, h, w, data })
    }

    pub fn filled(n: usize, h: usize, w: usize, label: u8) -> Result<Self> {
        Self::new(n, h, w, vec![label; n * h * w])
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, i: usize, y: usize, x: usize) -> u8 {
        self.data[(i * self.h + y) * self.w + x]
    }

    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Data error if any label is `>= classes`.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.data.iter().position(|&l| l as usize >= classes) {
            Some(i) => Err(Error::Data(format!(
                "label {} at flat index {i} is out of range for {classes} classes",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }

    /// Per-pixel argmax over the channel axis; ties pick the lower class.
    pub fn argmax<T: Scalar>(logits: &Tensor4<T>) -> Result<Self> {
        let (n, k, h, w) = logits.dims();
        if k > 256 {
            return Err(Error::Shape(format!("{k} classes do not fit u8 labels")));
        }
        let hw = h * w;
        let mut data = vec![0u8; n * hw];
        for i in 0..n {
            let s = logits.sample(i);
            let out = &mut data[i * hw..(i + 1) * hw];
            let mut best = s[..hw].to_vec();
            for c in 1..k {
                let plane = &s[c * hw..(c + 1) * hw];
                for p in 0..hw {
                    if plane[p] > best[p] {
                        best[p] = plane[p];
                        out[p] = c as u8;
                    }
                }
            }
        }
        Self::new(n, h, w, data)
    }

    pub fn sample(&self, i: usize) -> LabelMap {
        let hw = self.h * self.w;
        LabelMap {
            n: 1,
            h: self.h,
            w: self.w,
            data: self.data[i * hw..(i + 1) * hw].to_vec(),
        }
    }

    pub fn stack(maps: &[&LabelMap]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Construction("cannot stack zero label maps".into()))?;
        let mut data = Vec::with_capacity(maps.len() * first.len());
        let mut n = 0;
        for m in maps {
            if (m.h, m.w) != (first.h, first.w) {
                return Err(Error::Shape(format!(
                    "label maps {}x{} and {}x{} differ",
                    first.h, first.w, m.h, m.w
                )));
            }
            data.extend_from_slice(&m.data);
            n += m.n;
        }
        Self::new(n, first.h, first.w, data)
    }

    /// `(n, 1, h, w)` tensor holding the labels as numbers.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor4<T> {
        let data = self.data.iter().map(|&l| T::of_f64(l as f64)).collect();
        Tensor4::from_vec([self.n, 1, self.h, self.w], data).expect("label map extents are valid")
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor4<T>) -> Result<Self> {
        let (n, c, h, w) = t.dims();
        if c != 1 {
            return Err(Error::Shape(format!("label tensor must have 1 channel, got {c}")));
        }
        let data = t
            .data()
            .iter()
            .map(|&v| {
                let v = v.as_f64();
                if v.fract() == 0.0 && (0.0..256.0).contains(&v) {
                    Ok(v as u8)
                } else {
                    Err(Error::Data(format!("{v} is not a valid label")))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(n, h, w, data)
    }
}

/// One grayscale image `(1, 1, h, w)` with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub id: String,
    pub image: Tensor4<f32>,
    pub labels: LabelMap,
}

impl SegSample {
    pub fn new(id: impl Into<String>, image: Tensor4<f32>, labels: LabelMap) -> Result<Self> {
        let (n, c, h, w) = image.dims();
        if n != 1 || c != 1 {
            return Err(Error::Shape(format!("sample image must be 1x1xHxW, got {:?}", image.shape())));
        }
        if (labels.batch(), labels.height(), labels.width()) != (1, h, w) {
            return Err(Error::Shape(format!(
                "labels {}x{} do not match image {h}x{w}",
                labels.height(),
                labels.width()
            )));
        }
        Ok(Self {
            id: id.into(),
            image,
            labels,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.labels.height(), self.labels.width())
    }
}

/// Train and validation splits over a common class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub train: Vec<SegSample>,
    pub val: Vec<SegSample>,
}

impl Dataset {
    /// `n_train + n_val` generated samples; the first `n_train` train.
    pub fn synthetic(seed: u64, n_train: usize, n_val: usize, size: usize, classes: usize) -> Result<Self> {
        let mut all = gen_synthetic(seed, n_train + n_val, size, classes)?;
        let val = all.split_off(n_train);
        for (i, s) in all.iter_mut().enumerate() {
            s.id = format!("train-{i:05}");
        }
        let mut val = val;
        for (i, s) in val.iter_mut().enumerate() {
            s.id = format!("val-{i:05}");
        }
        Ok(Self {
            classes,
            train: all,
            val,
        })
    }

    /// Checks that both splits share one image size and stay within
    /// `classes`.
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 256 {
            return Err(Error::Data(format!("unsupported class count {}", self.classes)));
        }
        let mut size = None;
        for s in self.train.iter().chain(&self.val) {
            s.labels.check_classes(self.classes)?;
            match size {
                None => size = Some(s.size()),
                Some(sz) if sz != s.size() => {
                    return Err(Error::Data(format!("sample {} is {:?}, expected {sz:?}", s.id, s.size())))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Stack samples into an image batch and a label batch.
    pub fn batch(samples: &[&SegSample]) -> Result<(Tensor4<f32>, LabelMap)> {
        let images: Vec<&Tensor4<f32>> = samples.iter().map(|s| &s.image).collect();
        let labels: Vec<&LabelMap> = samples.iter().map(|s| &s.labels).collect();
        Ok((Tensor4::stack(&images)?, LabelMap::stack(&labels)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lower_class_on_ties() {
        let t = Tensor4::<f32>::from_vec([1, 3, 1, 2], vec![1.0, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
        assert_eq!(LabelMap::argmax(&t).unwrap().as_slice(), &[0, 1]);
    }

    #[test]
    fn tensor_round_trip() {
        let m = LabelMap::new(2, 1, 2, vec![0, 3, 1, 2]).unwrap();
        assert_eq!(LabelMap::from_tensor(&m.to_tensor::<f32>()).unwrap(), m);
        let bad = Tensor4::<f32>::new([1, 1, 1, 1], 0.5).unwrap();
        assert!(matches!(LabelMap::from_tensor(&bad), Err(Error::Data(_))));
    }

    #[test]
    fn out_of_range_labels_rejected() {
        let m = LabelMap::new(1, 1, 3, vec![0, 1, 4]).unwrap();
        assert!(m.check_classes(5).is_ok());
        assert!(matches!(m.check_classes(4), Err(Error::Data(_))));
    }

    #[test]
    fn stack_and_sample() {
        let a = LabelMap::filled(1, 2, 2, 1).unwrap();
        let b = LabelMap::filled(1, 2, 2, 2).unwrap();
        let s = LabelMap::stack(&[&a, &b]).unwrap();
        assert_eq!(s.batch(), 2);
        assert_eq!(s.sample(1), b);
        let c = LabelMap::filled(1, 2, 3, 0).unwrap();
        assert!(LabelMap::stack(&[&a, &c]).is_err());
    }
}
