use hpdnet::data::LabelMap;
use hpdnet::train::{dsc, mdsc, poly_lr, ConfusionCounts, TrainConfig};
use hpdnet::Rng;
use proptest::prelude::*;

fn random_map(rng: &mut Rng, len: usize, classes: usize) -> LabelMap {
    LabelMap::new(1, 1, len, (0..len).map(|_| rng.below(classes) as u8).collect()).unwrap()
}

/// Per-pixel brute-force counts, independent of `ConfusionCounts`.
fn brute_dsc(pred: &LabelMap, gt: &LabelMap, class: u8) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        match (p == class, g == class) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0.0 {
        1.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn symmetric_bounded_and_brute_force_equal(seed in any::<u64>(), len in 1usize..200, classes in 2usize..6) {
        let mut rng = Rng::new(seed);
        let a = random_map(&mut rng, len, classes);
        let b = random_map(&mut rng, len, classes);
        for c in 0..classes {
            let ab = dsc(&a, &b, c).unwrap();
            prop_assert_eq!(ab, dsc(&b, &a, c).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - brute_dsc(&a, &b, c as u8)).abs() <= 1e-12);
            let a_mask: Vec<bool> = a.as_slice().iter().map(|&l| l as usize == c).collect();
            let b_mask: Vec<bool> = b.as_slice().iter().map(|&l| l as usize == c).collect();
            prop_assert_eq!(ab == 1.0, a_mask == b_mask);
            let overlap = a_mask.iter().zip(&b_mask).any(|(p, q)| *p && *q);
            let union = a_mask.iter().zip(&b_mask).any(|(p, q)| *p || *q);
            prop_assert_eq!(ab == 0.0, !overlap && union);
        }
    }

    #[test]
    fn counts_are_consistent(seed in any::<u64>(), len in 1usize..100) {
        let mut rng = Rng::new(seed);
        let (a, b) = (random_map(&mut rng, len, 4), random_map(&mut rng, len, 4));
        let cc = ConfusionCounts::new(&a, &b, 4).unwrap();
        for c in 0..4u8 {
            let gt_pos = b.as_slice().iter().filter(|&&l| l == c).count() as u64;
            let pred_pos = a.as_slice().iter().filter(|&&l| l == c).count() as u64;
            prop_assert_eq!(cc.tp[c as usize] + cc.fn_[c as usize], gt_pos);
            prop_assert_eq!(cc.tp[c as usize] + cc.fp[c as usize], pred_pos);
        }
    }
}

#[test]
fn perfect_prediction() {
    let gt = random_map(&mut Rng::new(5), 64, 4);
    let (m, per) = mdsc(&gt, &gt, 4).unwrap();
    assert_eq!(m, 1.0);
    assert!(per.iter().all(|&v| v == 1.0));
}

#[test]
fn poly_schedule_strictly_decreasing() {
    let cfg = TrainConfig::default();
    let max = 1000;
    let lrs: Vec<f64> = (0..100).map(|i| poly_lr(i * max / 99, max, &cfg).unwrap()).collect();
    assert_eq!(lrs[0], 0.01);
    assert_eq!(lrs[99], 0.0);
    assert!(lrs.windows(2).all(|w| w[1] < w[0]));
}
