use crate::data::LabelMap;
use crate::error::{Error, Result};

/// Per-class TP, FP, FN counts between a prediction and a ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<Self> {
        if (pred.batch(), pred.height(), pred.width()) != (gt.batch(), gt.height(), gt.width()) {
            return Err(Error::Shape("prediction and ground truth differ in shape".into()));
        }
        pred.check_classes(classes)?;
        gt.check_classes(classes)?;
        let mut c = Self {
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
        };
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            if p == g {
                c.tp[p as usize] += 1;
            } else {
                c.fp[p as usize] += 1;
                c.fn_[g as usize] += 1;
            }
        }
        Ok(c)
    }

    pub fn classes(&self) -> usize {
        self.tp.len()
    }

    /// `2TP / (2TP + FP + FN)`, or 1 when the class is absent from both
    /// maps.
    pub fn dsc(&self, class: usize) -> f64 {
        let (tp, fp, fn_) = (self.tp[class], self.fp[class], self.fn_[class]);
        let den = 2 * tp + fp + fn_;
        if den == 0 {
            1.0
        } else {
            (2 * tp) as f64 / den as f64
        }
    }

    pub fn gt_present(&self, class: usize) -> bool {
        self.tp[class] + self.fn_[class] > 0
    }
}

pub fn dsc(pred: &LabelMap, gt: &LabelMap, class: usize) -> Result<f64> {
    let classes = (class + 1).max(pred.max_label().max(gt.max_label()) as usize + 1);
    Ok(ConfusionCounts::new(pred, gt, classes)?.dsc(class))
}

/// Mean Dice over foreground classes `1..classes`, plus the per-class
/// vector (index 0 is background).
///
/// Classes absent from the ground truth are left out of the mean. If every
/// foreground class is absent, the mean is taken over all of them.
pub fn mdsc(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<(f64, Vec<f64>)> {
    if classes < 2 {
        return Err(Error::Argument(format!("mDSC needs >= 2 classes, got {classes}")));
    }
    let counts = ConfusionCounts::new(pred, gt, classes)?;
    let per: Vec<f64> = (0..classes).map(|c| counts.dsc(c)).collect();
    let present: Vec<f64> = (1..classes).filter(|&c| counts.gt_present(c)).map(|c| per[c]).collect();
    let mean = if present.is_empty() {
        per[1..].iter().sum::<f64>() / (classes - 1) as f64
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok((mean, per))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: &[u8]) -> LabelMap {
        LabelMap::new(1, 1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn worked_example() {
        // TP = 3, FP = 1, FN = 1 for class 1
        let pred = map(&[1, 1, 1, 1, 0, 0]);
        let gt = map(&[1, 1, 1, 0, 1, 0]);
        assert_eq!(dsc(&pred, &gt, 1).unwrap(), 0.75);
    }

    #[test]
    fn identity_and_disjoint() {
        let a = map(&[0, 1, 2, 2]);
        assert_eq!(dsc(&a, &a, 2).unwrap(), 1.0);
        assert_eq!(dsc(&map(&[1, 1, 0, 0]), &map(&[0, 0, 1, 1]), 1).unwrap(), 0.0);
    }

    #[test]
    fn absent_everywhere_scores_one() {
        let a = map(&[0, 0, 1]);
        assert_eq!(dsc(&a, &a, 3).unwrap(), 1.0);
        let (m, per) = mdsc(&a, &a, 4).unwrap();
        assert_eq!(m, 1.0);
        assert_eq!(per, vec![1.0; 4]);
    }

    #[test]
    fn half_perfect() {
        let gt = map(&[1, 1, 2, 2, 0, 0]);
        let pred = map(&[1, 1, 0, 0, 2, 2]);
        let (m, per) = mdsc(&pred, &gt, 3).unwrap();
        assert_eq!(per[1], 1.0);
        assert_eq!(per[2], 0.0);
        assert_eq!(m, 0.5);
    }

    #[test]
    fn gt_absent_classes_skipped() {
        // class 2 predicted but absent from gt: excluded from the mean
        let gt = map(&[1, 1, 0, 0]);
        let pred = map(&[1, 1, 2, 0]);
        let (m, per) = mdsc(&pred, &gt, 3).unwrap();
        assert_eq!(per[2], 0.0);
        assert_eq!(m, 1.0);
        // no foreground in gt at all: mean over every foreground class
        let gt = map(&[0, 0, 0, 0]);
        let (m, _) = mdsc(&pred, &gt, 3).unwrap();
        assert_eq!(m, 0.0);
        let (m, _) = mdsc(&gt, &gt, 3).unwrap();
        assert_eq!(m, 1.0);
    }
}
