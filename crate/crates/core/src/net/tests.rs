use super::*;
use crate::rng::rng_uniform;

/// Conv3x3 (no bias) followed by batch norm gamma/beta.
fn cbr(c_in: usize, c_out: usize) -> usize {
    9 * c_in * c_out + 2 * c_out
}

#[test]
fn default_net_param_count_matches_hand_count() {
    let cfg = NetConfig::new(3, 16, 3);
    let p: NetParams<f32> = build_net(&cfg, &Rng::new(0)).unwrap();
    let hand = (cbr(1, 16) + cbr(16, 16))
        + (cbr(16, 32) + cbr(32, 32))
        + (cbr(32, 64) + cbr(64, 64))
        + (cbr(64, 128) + cbr(128, 128))
        + cbr(128, 64) + cbr(128, 64) + cbr(64, 64)
        + cbr(64, 32) + cbr(64, 32) + cbr(32, 32)
        + cbr(32, 16) + cbr(32, 16) + cbr(16, 16)
        + (16 * 3 + 3);
    assert_eq!(count_params(&p), hand);
    let costs = layer_costs(&cfg, 32, 32).unwrap();
    assert_eq!(costs.iter().map(|c| c.params).sum::<u64>(), hand as u64);
}

#[test]
fn single_layer_counts() {
    // 1x1 conv c_in=2, c_out=3 with bias
    let c = crate::ops::Conv1x1Params::<f32>::zeros(2, 3).unwrap();
    assert_eq!(c.weight.len() + c.bias.len(), 9);
    let bn = BatchNormParams::<f32>::new(4).unwrap();
    assert_eq!(bn.gamma.len() + bn.beta.len(), 8);
}

#[test]
fn build_is_deterministic() {
    let cfg = NetConfig::default().with_num_hpd(2).unwrap();
    let a: NetParams<f32> = build_net(&cfg, &Rng::new(5)).unwrap();
    let b: NetParams<f32> = build_net(&cfg, &Rng::new(5)).unwrap();
    assert_eq!(a, b);
    let c: NetParams<f32> = build_net(&cfg, &Rng::new(6)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn no_hpd_params_without_hpd_stages() {
    let p: NetParams<f32> = build_net(&NetConfig::default(), &Rng::new(1)).unwrap();
    assert!(p.down.iter().all(|d| matches!(d, DownParams::MaxPool)));
    assert!(p.tensors().iter().all(|t| !t.name.starts_with("down")));
}

#[test]
fn swapping_a_stage_keeps_unrelated_tensors() {
    let rng = Rng::new(77);
    let base: NetParams<f32> = build_net(&NetConfig::default(), &rng).unwrap();
    let swapped: NetParams<f32> = build_net(&NetConfig::default().with_num_hpd(1).unwrap(), &rng).unwrap();
    let other: std::collections::HashMap<_, _> =
        swapped.tensors().into_iter().map(|t| (t.name, t.tensor.clone())).collect();
    for t in base.tensors() {
        // Stage 0's downsampler and the conv consuming its output change.
        if t.name == "enc1.first.conv.weight" {
            assert_ne!(other[&t.name].shape(), t.tensor.shape());
            continue;
        }
        assert_eq!(&other[&t.name], t.tensor, "{}", t.name);
    }
    assert!(other.contains_key("down0.conv.weight"));
}

#[test]
fn invalid_configs_rejected() {
    assert!(NetConfig::new(3, 16, 4).with_num_hpd(4).is_err());
    let mut cfg = NetConfig::new(0, 16, 4);
    assert!(matches!(build_net::<f32>(&cfg, &Rng::new(0)), Err(Error::Config(_))));
    cfg = NetConfig::new(2, 16, 1);
    assert!(build_net::<f32>(&cfg, &Rng::new(0)).is_err());
    cfg = NetConfig::new(2, 16, 3);
    cfg.downsamplers.pop();
    assert!(build_net::<f32>(&cfg, &Rng::new(0)).is_err());
}

#[test]
fn forward_restores_resolution() {
    for downs in [Downsampler::MaxPool, Downsampler::Hpd, Downsampler::AvgPool, Downsampler::StridedConv] {
        let mut cfg = NetConfig::new(3, 4, 3);
        cfg.downsamplers = vec![downs; 3];
        let mut p: NetParams<f32> = build_net(&cfg, &Rng::new(2)).unwrap();
        let x: Tensor4<f32> = rng_uniform(&mut Rng::new(3), [2, 1, 32, 32], 0.0, 1.0).unwrap();
        let (logits, cache) = net_forward(&x, &mut p, true).unwrap();
        assert_eq!(logits.shape(), [2, 3, 32, 32]);
        assert_eq!(cache.bottleneck_shape(), [2, 32, 4, 4]);
        let g = Tensor4::new(logits.shape(), 0.01).unwrap();
        let (gx, grads) = net_backward(&g, &p, &cache).unwrap();
        assert_eq!(gx.shape(), x.shape());
        assert_eq!(grads.tensors().len(), p.tensors().len());
    }
}

#[test]
fn forward_rejects_bad_input() {
    let mut p: NetParams<f32> = build_net(&NetConfig::new(3, 4, 3), &Rng::new(2)).unwrap();
    let x = Tensor4::<f32>::zeros([1, 1, 20, 20]).unwrap();
    assert!(matches!(net_forward(&x, &mut p, false), Err(Error::Shape(_))));
    let x = Tensor4::<f32>::zeros([1, 2, 16, 16]).unwrap();
    assert!(matches!(net_forward(&x, &mut p, false), Err(Error::Shape(_))));
}

#[test]
fn inference_cache_cannot_backprop() {
    let mut p: NetParams<f64> = build_net(&NetConfig::new(1, 2, 2), &Rng::new(2)).unwrap();
    let x = Tensor4::<f64>::new([1, 1, 4, 4], 0.5).unwrap();
    let (y, cache) = net_forward(&x, &mut p, false).unwrap();
    assert!(matches!(net_backward(&y, &p, &cache), Err(Error::Usage(_))));
}

#[test]
fn forward_is_deterministic() {
    let cfg = NetConfig::new(2, 4, 3).with_num_hpd(1).unwrap();
    let p0: NetParams<f32> = build_net(&cfg, &Rng::new(9)).unwrap();
    let x: Tensor4<f32> = rng_uniform(&mut Rng::new(1), [2, 1, 16, 16], 0.0, 1.0).unwrap();
    let (a, _) = net_forward(&x, &mut p0.clone(), true).unwrap();
    let (b, _) = net_forward(&x, &mut p0.clone(), true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_text_round_trip() {
    let mut cfg = NetConfig::new(3, 8, 4).with_fusion(Fusion::Concat);
    cfg.downsamplers = vec![Downsampler::Hpd, Downsampler::AvgPool, Downsampler::StridedConv];
    assert_eq!(NetConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    assert!(NetConfig::from_text("depth = x").is_err());
    assert!(NetConfig::from_text("colour = red").is_err());
}

#[test]
fn flop_convention_examples() {
    let costs = layer_costs(&NetConfig::new(1, 2, 3), 4, 4).unwrap();
    let head = costs.iter().find(|c| c.name == "head").unwrap();
    // 1x1 conv c_in=2, c_out=3 on a 4x4 map: (2*2*3 + 3) * 16
    assert_eq!(head.flops, 240);
    let pool = costs.iter().find(|c| c.name == "down0.maxpool").unwrap();
    // 2 channels, 4 windows each, 3 comparisons per window
    assert_eq!(pool.flops, 2 * 12);
}
