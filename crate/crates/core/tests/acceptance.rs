//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::time::{Duration, Instant};

use hpdnet::data::{decode_tensor, encode_tensor, Dataset, LabelMap, HEADER_LEN};
use hpdnet::gradcheck::run_all;
use hpdnet::hpd::minmax_fuse;
use hpdnet::net::{build_net, count_flops, count_params, NetConfig};
use hpdnet::ops::pool::naive;
use hpdnet::ops::{avg_pool2d, pool2d, Padding, PoolKind};
use hpdnet::train::{ablate, dsc, evaluate, poly_lr, train, ConfusionCounts, TrainConfig};
use hpdnet::{rng_uniform, LoadError, Rng, Tensor4};

/// Final validation mDSC both desk-scale variants must reach. Pinned from
/// pilot runs (maxpool 0.5466, 3 HPD stages 0.5585).
const T: f64 = 0.50;
const RUN_LIMIT: Duration = Duration::from_secs(600);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn pick(rng: &mut Rng, options: &[usize]) -> usize {
    options[rng.below(options.len())]
}

fn pooling_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(1);
    let mut bad = 0;
    for _ in 0..1000 {
        let shape = [
            pick(&mut rng, &[1, 2]),
            pick(&mut rng, &[1, 3]),
            pick(&mut rng, &[2, 4, 6, 8]),
            pick(&mut rng, &[2, 4, 6, 8]),
        ];
        let k = pick(&mut rng, &[1, 2]);
        let x: Tensor4<f64> = rng_uniform(&mut rng, shape, -1.0, 1.0).unwrap();
        for kind in [PoolKind::Min, PoolKind::Max] {
            let (y, idx) = pool2d(&x, k, kind, Padding::Strict).unwrap();
            let (z, zidx) = naive::pool2d(&x, k, kind).unwrap();
            bad += usize::from(y != z || idx.as_slice() != zidx.as_slice());
        }
        bad += usize::from(avg_pool2d(&x, k).unwrap() != naive::avg_pool2d(&x, k).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(bad == 0 && secs < 10.0, format!("1000 tensors x 3 kernels, mismatches={bad}, {secs:.2}s (< 10s)"))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let reports = run_all(7).unwrap();
    let secs = start.elapsed().as_secs_f64();
    for r in &reports {
        println!("    {r}");
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.op.as_str()).collect();
    outcome(
        failed.is_empty() && secs < 60.0,
        format!("{} checks, failed={failed:?}, {secs:.2}s (< 60s)", reports.len()),
    )
}

fn fuse(x: &Tensor4<f64>) -> Tensor4<f64> {
    minmax_fuse(x, 2).unwrap().0
}

fn close(a: &Tensor4<f64>, b: &Tensor4<f64>) -> bool {
    a.data().iter().zip(b.data()).all(|(p, q)| (p - q).abs() <= 1e-12)
}

fn fusion_algebra() -> Outcome {
    let mut rng = Rng::new(3);
    let mut failures = Vec::new();
    for _ in 0..500 {
        let shape = [1 + rng.below(2), 1 + rng.below(3), 2 * (1 + rng.below(4)), 2 * (1 + rng.below(4))];
        let x: Tensor4<f64> = rng_uniform(&mut rng, shape, -4.0, 4.0).unwrap();
        let f = fuse(&x);
        let c = rng.uniform(-3.0, 3.0);
        let a = rng.uniform(0.0, 5.0);
        let bump: Tensor4<f64> = rng_uniform(&mut rng, shape, 0.0, 1.0).unwrap();
        let (mn, _) = naive::pool2d(&x, 2, PoolKind::Min).unwrap();
        let (mx, _) = naive::pool2d(&x, 2, PoolKind::Max).unwrap();
        let checks = [
            ("antisymmetry", fuse(&x.scale(-1.0)) == f.scale(-1.0)),
            ("shift", close(&fuse(&x.map(|v| v + c)), &f.map(|v| v + 2.0 * c))),
            ("homogeneity", close(&fuse(&x.scale(a)), &f.scale(a))),
            (
                "monotonicity",
                fuse(&x.add(&bump).unwrap()).data().iter().zip(f.data()).all(|(p, q)| p >= q),
            ),
            (
                "bounds",
                (0..f.len()).all(|i| 2.0 * mn.data()[i] <= f.data()[i] && f.data()[i] <= 2.0 * mx.data()[i]),
            ),
            ("k=1", minmax_fuse(&x, 1).unwrap().0 == x.scale(2.0)),
        ];
        for (name, ok) in checks {
            if !ok && !failures.contains(&name) {
                failures.push(name);
            }
        }
    }
    outcome(failures.is_empty(), format!("500 tensors x 6 properties, failing={failures:?}"))
}

fn map(v: &[u8]) -> LabelMap {
    LabelMap::new(1, 1, v.len(), v.to_vec()).unwrap()
}

fn dsc_metric() -> Outcome {
    let pred = map(&[1, 1, 1, 1, 0, 0]);
    let gt = map(&[1, 1, 1, 0, 1, 0]);
    let worked = dsc(&pred, &gt, 1).unwrap();
    let identity = dsc(&gt, &gt, 1).unwrap();
    let disjoint = dsc(&map(&[1, 1, 0, 0]), &map(&[0, 0, 1, 1]), 1).unwrap();
    let mut rng = Rng::new(4);
    let (mut asym, mut brute_bad) = (0, 0);
    for _ in 0..200 {
        let len = 1 + rng.below(300);
        let classes = 2 + rng.below(4);
        let a = map(&(0..len).map(|_| rng.below(classes) as u8).collect::<Vec<_>>());
        let b = map(&(0..len).map(|_| rng.below(classes) as u8).collect::<Vec<_>>());
        let counts = ConfusionCounts::new(&a, &b, classes).unwrap();
        for c in 0..classes {
            let ab = dsc(&a, &b, c).unwrap();
            asym += usize::from(ab != dsc(&b, &a, c).unwrap());
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (&p, &g) in a.as_slice().iter().zip(b.as_slice()) {
                tp += u64::from(p as usize == c && g as usize == c);
                fp += u64::from(p as usize == c && g as usize != c);
                fn_ += u64::from(p as usize != c && g as usize == c);
            }
            let brute = if tp + fp + fn_ == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
            let counted = (counts.tp[c] as u64, counts.fp[c] as u64, counts.fn_[c] as u64);
            brute_bad += usize::from((ab - brute).abs() > 1e-12 || counted != (tp, fp, fn_));
        }
    }
    outcome(
        worked == 0.75 && identity == 1.0 && disjoint == 0.0 && asym == 0 && brute_bad == 0,
        format!(
            "tp3/fp1/fn1={worked} identity={identity} disjoint={disjoint}, 200 pairs: asymmetric={asym} brute_mismatch={brute_bad}"
        ),
    )
}

fn poly_schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let max = 1000;
    let first = poly_lr(0, max, &cfg).unwrap();
    let last = poly_lr(max, max, &cfg).unwrap();
    let points: Vec<f64> = (0..100).map(|i| poly_lr(i * max / 99, max, &cfg).unwrap()).collect();
    let decreasing = points.windows(2).all(|w| w[1] < w[0]);
    outcome(
        first == 0.01 && last == 0.0 && decreasing,
        format!("lr(0)={first} lr(max)={last} strictly decreasing over 100 points={decreasing}"),
    )
}

fn end_to_end() -> Outcome {
    let ds = Dataset::synthetic(42, 300, 50, 64, 4).unwrap();
    let cfg = TrainConfig {
        seed: 42,
        max_iters: 200,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for num_hpd in [0, 3] {
        let net = NetConfig::new(3, 16, 4).with_num_hpd(num_hpd).unwrap();
        let start = Instant::now();
        let (params, log) = train(&net, &cfg, &ds).unwrap();
        let elapsed = start.elapsed();
        let val = evaluate(&params, &ds.val, 1).unwrap();
        let train_split = evaluate(&params, &ds.train, 1).unwrap();
        let (params2, log2) = train(&net, &cfg, &ds).unwrap();
        let exact = log == log2 && params == params2 && evaluate(&params2, &ds.val, 1).unwrap() == val;
        println!(
            "    num_hpd={num_hpd} val_mdsc={:.4} per_class={:?} train_mdsc={:.4} final_loss={:.4} time={:.1}s rerun_exact={exact}",
            val.mdsc,
            val.per_class.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            train_split.mdsc,
            log.last().unwrap().loss,
            elapsed.as_secs_f64()
        );
        ok &= val.mdsc >= T && elapsed < RUN_LIMIT && exact;
        parts.push(format!("num_hpd={num_hpd}: {:.4}", val.mdsc));
    }
    outcome(ok, format!("val mDSC >= {T}: {}; each run < 600s; reruns bit-exact", parts.join(", ")))
}

fn ablation_protocol() -> Outcome {
    let ds = Dataset::synthetic(8, 48, 16, 32, 4).unwrap();
    let cfg = TrainConfig {
        seed: 8,
        max_iters: 20,
        eval_every: 10,
        ..TrainConfig::default()
    };
    let net = NetConfig::new(3, 8, 4);
    let a = ablate(&net, &cfg, &ds, &[0, 1, 2, 3]).unwrap();
    let b = ablate(&net, &cfg, &ds, &[0, 1, 2, 3]).unwrap();
    for line in a.to_text().lines() {
        println!("    {line}");
    }
    let rows = a.rows.len();
    let same = a.to_tsv() == b.to_tsv();
    outcome(rows == 4 && same, format!("rows={rows}, bit-reproducible={same}"))
}

/// `3x3 conv (no bias) + BN gamma/beta`.
fn cbr_params(ci: u64, co: u64) -> u64 {
    9 * ci * co + 2 * co
}

/// Conv MACs x 2, then BN (2) and ReLU (1) per output element.
fn cbr_flops(ci: u64, co: u64, hw: u64) -> u64 {
    2 * 9 * ci * co * hw + 3 * co * hw
}

fn cost_accounting() -> Outcome {
    let base = NetConfig::default();
    let hpd = base.clone().with_num_hpd(3).unwrap();
    // 64x64 input; stage widths 16, 32, 64, 128 at 64, 32, 16, 8 pixels a side
    let hw = [4096u64, 1024, 256, 64];
    let shared_params = cbr_params(1, 16) + cbr_params(16, 16)
        + cbr_params(32, 32)
        + cbr_params(64, 64)
        + cbr_params(128, 128)
        + cbr_params(128, 64) + cbr_params(128, 64) + cbr_params(64, 64)
        + cbr_params(64, 32) + cbr_params(64, 32) + cbr_params(32, 32)
        + cbr_params(32, 16) + cbr_params(32, 16) + cbr_params(16, 16)
        + (16 * 4 + 4);
    let base_params = shared_params + cbr_params(16, 32) + cbr_params(32, 64) + cbr_params(64, 128);
    // HPD stage: 1x1 conv c -> 2c with bias, BN; the next stage's first conv then sees 2c
    let hpd_params = shared_params
        + (16 * 32 + 32 + 2 * 32) + cbr_params(32, 32)
        + (32 * 64 + 64 + 2 * 64) + cbr_params(64, 64)
        + (64 * 128 + 128 + 2 * 128) + cbr_params(128, 128);

    let shared_flops = cbr_flops(1, 16, hw[0]) + cbr_flops(16, 16, hw[0])
        + cbr_flops(32, 32, hw[1])
        + cbr_flops(64, 64, hw[2])
        + cbr_flops(128, 128, hw[3])
        + cbr_flops(128, 64, hw[2]) + cbr_flops(128, 64, hw[2]) + cbr_flops(64, 64, hw[2])
        + cbr_flops(64, 32, hw[1]) + cbr_flops(64, 32, hw[1]) + cbr_flops(32, 32, hw[1])
        + cbr_flops(32, 16, hw[0]) + cbr_flops(32, 16, hw[0]) + cbr_flops(16, 16, hw[0])
        + (2 * 16 * 4 + 4) * hw[0];
    // 2x2 max pool: 3 comparisons per output
    let base_flops = shared_flops
        + cbr_flops(16, 32, hw[1]) + cbr_flops(32, 64, hw[2]) + cbr_flops(64, 128, hw[3])
        + 3 * (16 * hw[1] + 32 * hw[2] + 64 * hw[3]);
    // HPD: 3 + 3 comparisons and 1 add per fused output, 1x1 conv with bias, BN + ReLU
    let hpd_stage = |c: u64, ohw: u64| (7 * c + (2 * c * 2 * c + 2 * c) + 3 * 2 * c) * ohw;
    let hpd_flops = shared_flops
        + cbr_flops(32, 32, hw[1]) + cbr_flops(64, 64, hw[2]) + cbr_flops(128, 128, hw[3])
        + hpd_stage(16, hw[1]) + hpd_stage(32, hw[2]) + hpd_stage(64, hw[3]);

    let bp = count_params(&build_net::<f32>(&base, &Rng::new(0)).unwrap()) as u64;
    let hp = count_params(&build_net::<f32>(&hpd, &Rng::new(0)).unwrap()) as u64;
    let bf = count_flops(&base, [1, 1, 64, 64]).unwrap();
    let hf = count_flops(&hpd, [1, 1, 64, 64]).unwrap();
    let (pr, fr) = (hp as f64 / bp as f64, hf as f64 / bf as f64);
    outcome(
        bp == base_params && hp == hpd_params && bf == base_flops && hf == hpd_flops && pr < 1.35 && fr < 1.25,
        format!(
            "params {bp} (hand {base_params}) -> {hp} (hand {hpd_params}) ratio {pr:.3} < 1.35; \
             flops {bf} (hand {base_flops}) -> {hf} (hand {hpd_flops}) ratio {fr:.3} < 1.25"
        ),
    )
}

fn tensor_file() -> Outcome {
    let mut rng = Rng::new(9);
    let mut bad_round_trip = 0;
    let (mut checksum_caught, mut length_caught) = (0, 0);
    for i in 0..100 {
        let shape = [1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(9), 1 + rng.below(9)];
        let bytes = if i % 2 == 0 {
            let t: Tensor4<f32> = rng_uniform(&mut rng, shape, -1e4, 1e4).unwrap();
            let bytes = encode_tensor(&t).unwrap();
            let back = decode_tensor::<f32>(&bytes).unwrap();
            let bits = |t: &Tensor4<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            bad_round_trip += usize::from(back.shape() != t.shape() || bits(&back) != bits(&t));
            bytes
        } else {
            let t: Tensor4<f64> = rng_uniform(&mut rng, shape, -1e4, 1e4).unwrap();
            let bytes = encode_tensor(&t).unwrap();
            let back = decode_tensor::<f64>(&bytes).unwrap();
            let bits = |t: &Tensor4<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            bad_round_trip += usize::from(back.shape() != t.shape() || bits(&back) != bits(&t));
            bytes
        };
        let mut corrupt = bytes.clone();
        let at = HEADER_LEN + rng.below(bytes.len() - HEADER_LEN - 8);
        corrupt[at] ^= 1 << rng.below(8);
        let cut = rng.below(bytes.len());
        let (c, l) = if i % 2 == 0 {
            (decode_tensor::<f32>(&corrupt).err(), decode_tensor::<f32>(&bytes[..cut]).err())
        } else {
            (decode_tensor::<f64>(&corrupt).err(), decode_tensor::<f64>(&bytes[..cut]).err())
        };
        checksum_caught += usize::from(matches!(c, Some(LoadError::Checksum { .. })));
        length_caught += usize::from(matches!(l, Some(LoadError::Length { .. })));
    }
    outcome(
        bad_round_trip == 0 && checksum_caught == 100 && length_caught == 100,
        format!(
            "100 tensors: round-trip mismatches={bad_round_trip}, corrupted rejected={checksum_caught}/100, truncated rejected={length_caught}/100"
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("pooling oracle equivalence", pooling_oracle),
        ("gradient suite", gradient_suite),
        ("fusion algebra", fusion_algebra),
        ("DSC metric", dsc_metric),
        ("poly schedule", poly_schedule),
        ("desk-scale end-to-end", end_to_end),
        ("ablation protocol", ablation_protocol),
        ("cost accounting", cost_accounting),
        ("tensor file round-trip", tensor_file),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        println!("[{}] {} {name}: {}", i + 1, if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
