use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Additive smoothing in the soft Dice numerator and denominator.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    /// `lambda * ce + (1 - lambda) * dice_loss`
    pub loss: f64,
    /// Mean per-pixel softmax cross-entropy.
    pub ce: f64,
    /// `1 - mean soft Dice` over all classes.
    pub dice_loss: f64,
    /// d loss / d logits.
    pub grad: Tensor4<T>,
}

fn check(logits_shape: [usize; 4], labels: &LabelMap, lambda: f64) -> Result<()> {
    let [n, k, h, w] = logits_shape;
    if (labels.batch(), labels.height(), labels.width()) != (n, h, w) {
        return Err(Error::Shape(format!(
            "labels {}x{}x{} do not match logits {:?}",
            labels.batch(),
            labels.height(),
            labels.width(),
            logits_shape
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Argument(format!("loss mix {lambda} outside [0, 1]")));
    }
    labels.check_classes(k)
}

/// Softmax cross-entropy mixed with soft Dice, and its gradient.
///
/// Soft Dice for class `c` is `(2 sum(p_c g_c) + s) / (sum p_c + sum g_c + s)`
/// with sums over the whole batch and `s = DICE_SMOOTH`. All arithmetic is
/// in f64.
pub fn loss_ce_dice<T: Scalar>(logits: &Tensor4<T>, labels: &LabelMap, lambda: f64) -> Result<LossOutput<T>> {
    check(logits.shape(), labels, lambda)?;
    let (n, k, h, w) = logits.dims();
    let hw = h * w;
    let pixels = (n * hw) as f64;
    let lbl = labels.as_slice();

    // softmax probabilities, laid out like the logits
    let mut prob = vec![0.0f64; logits.len()];
    let mut ce = 0.0;
    let mut z = vec![0.0f64; k];
    for i in 0..n {
        let s = logits.sample(i);
        let base = i * k * hw;
        for p in 0..hw {
            for c in 0..k {
                z[c] = s[c * hw + p].as_f64();
            }
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for zc in z.iter_mut() {
                *zc = (*zc - m).exp();
                sum += *zc;
            }
            let g = lbl[i * hw + p] as usize;
            for c in 0..k {
                prob[base + c * hw + p] = z[c] / sum;
            }
            ce -= (z[g] / sum).ln();
        }
    }
    ce /= pixels;

    let mut inter = vec![0.0f64; k];
    let mut psum = vec![0.0f64; k];
    let mut gsum = vec![0.0f64; k];
    for i in 0..n {
        for p in 0..hw {
            let g = lbl[i * hw + p] as usize;
            gsum[g] += 1.0;
            for c in 0..k {
                let pr = prob[i * k * hw + c * hw + p];
                psum[c] += pr;
                if c == g {
                    inter[c] += pr;
                }
            }
        }
    }
    let mut dice_mean = 0.0;
    // d(mean dice)/d p_c = (2 g den - num) / den^2 / k
    let mut d_num = vec![0.0f64; k];
    let mut d_den = vec![0.0f64; k];
    for c in 0..k {
        let num = 2.0 * inter[c] + DICE_SMOOTH;
        let den = psum[c] + gsum[c] + DICE_SMOOTH;
        dice_mean += num / den;
        d_num[c] = 2.0 / den / k as f64;
        d_den[c] = num / (den * den) / k as f64;
    }
    dice_mean /= k as f64;
    let dice_loss = 1.0 - dice_mean;

    let mut grad = vec![T::zero(); logits.len()];
    let mut dl_dp = vec![0.0f64; k];
    for i in 0..n {
        let base = i * k * hw;
        for p in 0..hw {
            let g = lbl[i * hw + p] as usize;
            let mut dot = 0.0;
            for c in 0..k {
                let pc = prob[base + c * hw + p];
                let onehot = if c == g { 1.0 } else { 0.0 };
                dl_dp[c] = -(1.0 - lambda) * (onehot * d_num[c] - d_den[c]);
                dot += pc * dl_dp[c];
            }
            for c in 0..k {
                let pc = prob[base + c * hw + p];
                let onehot = if c == g { 1.0 } else { 0.0 };
                let ce_grad = lambda * (pc - onehot) / pixels;
                grad[base + c * hw + p] = T::of_f64(ce_grad + pc * (dl_dp[c] - dot));
            }
        }
    }
    Ok(LossOutput {
        loss: lambda * ce + (1.0 - lambda) * dice_loss,
        ce,
        dice_loss,
        grad: Tensor4::from_vec(logits.shape(), grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_two_class_ce_is_ln2() {
        let logits = Tensor4::<f64>::zeros([2, 2, 3, 3]).unwrap();
        let labels = LabelMap::new(2, 3, 3, (0..18).map(|i| (i % 2) as u8).collect()).unwrap();
        let out = loss_ce_dice(&logits, &labels, 1.0).unwrap();
        assert!((out.ce - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(out.loss, out.ce);
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let labels = LabelMap::new(1, 2, 2, vec![0, 1, 2, 1]).unwrap();
        let mut logits = Tensor4::<f64>::zeros([1, 3, 2, 2]).unwrap();
        for p in 0..4 {
            let g = labels.as_slice()[p] as usize;
            logits.data_mut()[g * 4 + p] = 60.0;
        }
        let out = loss_ce_dice(&logits, &labels, 0.5).unwrap();
        assert!(out.loss < 1e-12, "{}", out.loss);
    }

    #[test]
    fn bad_inputs() {
        let logits = Tensor4::<f32>::zeros([1, 2, 2, 2]).unwrap();
        let bad = LabelMap::new(1, 2, 2, vec![0, 1, 2, 0]).unwrap();
        assert!(matches!(loss_ce_dice(&logits, &bad, 0.5), Err(Error::Data(_))));
        let small = LabelMap::filled(1, 1, 2, 0).unwrap();
        assert!(matches!(loss_ce_dice(&logits, &small, 0.5), Err(Error::Shape(_))));
        let ok = LabelMap::filled(1, 2, 2, 0).unwrap();
        assert!(matches!(loss_ce_dice(&logits, &ok, 1.5), Err(Error::Argument(_))));
    }
}
