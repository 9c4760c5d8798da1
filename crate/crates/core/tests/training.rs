use hpdnet::data::Dataset;
use hpdnet::net::{build_net, net_forward, NetConfig, ParamRole};
use hpdnet::train::{
    ablate, evaluate, loss_ce_dice, sgd_step, train, train_with, MetricRecord, TrainConfig,
};
use hpdnet::{Error, Rng};

fn small_data() -> Dataset {
    Dataset::synthetic(3, 12, 4, 32, 4).unwrap()
}

fn small_net() -> NetConfig {
    NetConfig::new(2, 4, 4)
}

fn quick(iters: usize) -> TrainConfig {
    TrainConfig {
        max_iters: iters,
        batch_size: 4,
        eval_every: 2,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_iterations_return_initial_params() {
    let ds = small_data();
    let cfg = quick(0);
    let (p, hist) = train(&small_net(), &cfg, &ds).unwrap();
    assert!(hist.is_empty());
    let (q, _) = train(&small_net(), &cfg, &ds).unwrap();
    assert_eq!(p, q);
}

#[test]
fn same_seed_same_everything() {
    let ds = small_data();
    let cfg = quick(5);
    let (p1, h1) = train(&small_net(), &cfg, &ds).unwrap();
    let (p2, h2) = train(&small_net(), &cfg, &ds).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(h1, h2);
    assert_eq!(h1.len(), 5);
    assert!(h1[0].mdsc.is_none() && h1[1].mdsc.is_some() && h1[4].mdsc.is_some());
    let (p3, _) = train(&small_net(), &TrainConfig { seed: 12, ..cfg }, &ds).unwrap();
    assert_ne!(p1, p3);
}

#[test]
fn callback_sees_every_record() {
    let ds = small_data();
    let mut seen: Vec<MetricRecord> = Vec::new();
    let (_, hist) = train_with(&small_net(), &quick(3), &ds, |r| seen.push(r.clone())).unwrap();
    assert_eq!(seen, hist);
    assert_eq!(hist[0].lr, 0.01);
}

#[test]
fn setup_errors_before_training() {
    let ds = small_data();
    let mut wrong_classes = small_net();
    wrong_classes.classes = 3;
    assert!(matches!(train(&wrong_classes, &quick(1), &ds), Err(Error::Config(_))));
    let big_batch = TrainConfig { batch_size: 64, ..quick(1) };
    assert!(matches!(train(&small_net(), &big_batch, &ds), Err(Error::Config(_))));
    let deep = NetConfig::new(6, 4, 4);
    assert!(matches!(train(&deep, &quick(1), &ds), Err(Error::Shape(_))));
    let empty = Dataset {
        classes: 4,
        train: vec![],
        val: vec![],
    };
    assert!(matches!(train(&small_net(), &quick(1), &empty), Err(Error::Data(_))));
}

#[test]
fn small_step_decreases_loss_on_same_batch() {
    let ds = small_data();
    let refs: Vec<_> = ds.train.iter().take(4).collect();
    let (x, labels) = Dataset::batch(&refs).unwrap();
    for num_hpd in [0, 2] {
        let cfg = small_net().with_num_hpd(num_hpd).unwrap();
        let mut p = build_net::<f32>(&cfg, &Rng::new(2)).unwrap();
        let (logits, cache) = net_forward(&x, &mut p.clone(), true).unwrap();
        let before = loss_ce_dice(&logits, &labels, 0.5).unwrap();
        let (_, grads) = hpdnet::net::net_backward(&before.grad, &p, &cache).unwrap();
        sgd_step(&mut p, &grads, 0.01, 0.0).unwrap();
        let (logits, _) = net_forward(&x, &mut p.clone(), true).unwrap();
        let after = loss_ce_dice(&logits, &labels, 0.5).unwrap();
        assert!(after.loss < before.loss, "{} -> {}", before.loss, after.loss);
    }
}

#[test]
fn weight_decay_compounds_multiplicatively() {
    let cfg = TrainConfig::default();
    let mut p = build_net::<f64>(&small_net(), &Rng::new(4)).unwrap();
    let zero = p.zeros_like();
    let start = p.clone();
    let mut factor = 1.0;
    for t in 0..20 {
        let lr = hpdnet::train::poly_lr(t, 20, &cfg).unwrap();
        sgd_step(&mut p, &zero, lr, 0.05).unwrap();
        factor *= 1.0 - lr * 0.05;
    }
    for (a, b) in p.tensors().iter().zip(start.tensors()) {
        for (&v, &v0) in a.tensor.data().iter().zip(b.tensor.data()) {
            if a.role == ParamRole::ConvWeight {
                assert!((v - v0 * factor).abs() <= 1e-12 * v0.abs().max(1.0), "{}", a.name);
            } else {
                assert_eq!(v, v0, "{}", a.name);
            }
        }
    }
}

#[test]
fn evaluation_independent_of_workers() {
    let ds = small_data();
    let (p, _) = train(&small_net(), &quick(2), &ds).unwrap();
    let one = evaluate(&p, &ds.train, 1).unwrap();
    let three = evaluate(&p, &ds.train, 3).unwrap();
    assert_eq!(one, three);
    assert_eq!(one.images, 12);
}

#[test]
fn degenerate_sweep_matches_plain_run() {
    let ds = small_data();
    let cfg = quick(3);
    let table = ablate(&small_net(), &cfg, &ds, &[0]).unwrap();
    assert_eq!(table.rows.len(), 1);
    let (p, hist) = train(&small_net(), &cfg, &ds).unwrap();
    let report = evaluate(&p, &ds.val, 1).unwrap();
    assert_eq!(table.rows[0].mdsc, report.mdsc);
    assert_eq!(table.rows[0].final_loss, hist.last().unwrap().loss);
}

#[test]
fn sweep_rows_share_protocol() {
    let ds = small_data();
    let table = ablate(&small_net(), &quick(2), &ds, &[0, 1, 2]).unwrap();
    assert_eq!(table.rows.iter().map(|r| r.num_hpd).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(table.rows.iter().all(|r| r.iters == 2));
    assert!(table.rows.windows(2).all(|w| w[1].params > w[0].params));
    let tsv = table.to_tsv();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("num_hpd\tparams\tflops"));
    assert_eq!(lines[1].split('\t').count(), lines[0].split('\t').count());
    assert_eq!(table.to_text().lines().count(), 4);
    assert!(matches!(ablate(&small_net(), &quick(2), &ds, &[3]), Err(Error::Config(_))));
}
