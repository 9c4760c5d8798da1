//! Central finite-difference checks of every backward pass, in f64.
//!
//! Each check builds a scalar objective (a fixed random weighting of the
//! op's output, or the training loss for the network), perturbs every
//! checked coordinate by `±H`, and compares against the analytic gradient
//! with `rel = |a - n| / max(|a|, |n|, REL_FLOOR)`.
//!
//! A coordinate whose central differences at `H` and `H / 2` disagree by
//! more than a tenth of the tolerance straddles a ReLU or max/min selection
//! kink. It is skipped and counted; a check fails when more than
//! `MAX_SKIP_FRACTION` of its coordinates are skipped. Network checks
//! redraw their instance (up to `MAX_DRAWS` times) until that holds.

use std::fmt;

use crate::data::LabelMap;
use crate::error::Result;
use crate::hpd::{hpd_backward, hpd_forward, Fusion, HpdParams};
use crate::net::layers::{conv3x3_backward, conv3x3_forward, upsample2x, upsample2x_backward, Conv3x3Params};
use crate::net::{build_net, net_backward, net_forward, Downsampler, NetConfig, NetParams};
use crate::ops::{
    avg_pool2d, avg_pool_backward, batchnorm_backward, batchnorm_forward, conv1x1_backward, conv1x1_forward,
    max_pool2d, min_pool2d, pool_backward, relu, relu_backward, strided_conv_backward, strided_conv_downsample,
    BatchNormParams, Conv1x1Params, StridedConvParams,
};
use crate::rng::{rng_uniform, Rng};
use crate::tensor::{Shape4, Tensor4};
use crate::train::loss_ce_dice;

pub const H: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-6;
/// Elementwise and linear ops.
pub const TOL_LINEAR: f64 = 1e-4;
/// Batch-norm chains and the loss.
pub const TOL_COMPOSITE: f64 = 1e-3;
/// Coordinates checked per tensor; larger tensors are strided.
const MAX_COORDS: usize = 64;
pub const MAX_SKIP_FRACTION: f64 = 0.05;
pub const MAX_DRAWS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub op: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Number of coordinates compared.
    pub checked: usize,
    /// Coordinates dropped for straddling a kink.
    pub skipped: usize,
    /// Instances drawn before this one was accepted.
    pub draws: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance && self.few_kinks()
    }

    fn few_kinks(&self) -> bool {
        (self.skipped as f64) <= MAX_SKIP_FRACTION * (self.checked + self.skipped) as f64
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<16} max_rel_err={:.3e} tol={:.0e} coords={:<4} skipped={:<2} draws={} {}",
            self.op,
            self.max_rel_err,
            self.tolerance,
            self.checked,
            self.skipped,
            self.draws,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Distinct values in `(-1, 1)` with gaps of at least `1 / len`, in random
/// order, so no pooling window ties and nothing sits on a ReLU kink.
pub fn tie_free(rng: &mut Rng, shape: Shape4) -> Result<Tensor4<f64>> {
    let len: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    let step = 2.0 / len as f64;
    let data = order
        .into_iter()
        .map(|i| -1.0 + step * (i as f64 + 0.5 + rng.uniform(-0.25, 0.25)))
        .collect();
    Tensor4::from_vec(shape, data)
}

fn weighted_sum(y: &Tensor4<f64>, w: &Tensor4<f64>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Compare analytic gradients of `f` at `state` with central differences.
fn compare(
    op: &str,
    tolerance: f64,
    state: &[Tensor4<f64>],
    analytic: &[Tensor4<f64>],
    f: impl Fn(&[Tensor4<f64>]) -> Result<f64>,
) -> Result<GradReport> {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    let mut probe = state.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        let len = state[t].len();
        let stride = len.div_ceil(MAX_COORDS);
        for i in (0..len).step_by(stride) {
            let orig = state[t].data()[i];
            let mut central = |h: f64| -> Result<f64> {
                probe[t].data_mut()[i] = orig + h;
                let up = f(&probe)?;
                probe[t].data_mut()[i] = orig - h;
                let down = f(&probe)?;
                probe[t].data_mut()[i] = orig;
                Ok((up - down) / (2.0 * h))
            };
            let numeric = central(H)?;
            let half = central(H / 2.0)?;
            if (numeric - half).abs() > 0.1 * tolerance * numeric.abs().max(half.abs()).max(REL_FLOOR) {
                skipped += 1;
                continue;
            }
            worst = worst.max(rel_err(grad.data()[i], numeric));
            checked += 1;
        }
    }
    Ok(GradReport {
        op: op.to_string(),
        max_rel_err: worst,
        tolerance,
        checked,
        skipped,
        draws: 1,
    })
}

fn check_pool(rng: &mut Rng, min: bool) -> Result<GradReport> {
    let x = tie_free(rng, [2, 3, 6, 6])?;
    let w = rng_uniform(rng, [2, 3, 3, 3], -1.0, 1.0)?;
    let pool = |x: &Tensor4<f64>| if min { min_pool2d(x, 2) } else { max_pool2d(x, 2) };
    let (_, idx) = pool(&x)?;
    let g = pool_backward(&w, &idx, x.shape())?;
    let op = if min { "min_pool" } else { "max_pool" };
    compare(op, TOL_LINEAR, &[x], &[g], |s| Ok(weighted_sum(&pool(&s[0])?.0, &w)))
}

fn check_avg_pool(rng: &mut Rng) -> Result<GradReport> {
    let x = tie_free(rng, [2, 2, 4, 6])?;
    let w = rng_uniform(rng, [2, 2, 2, 3], -1.0, 1.0)?;
    let g = avg_pool_backward(&w, 2, x.shape())?;
    compare("avg_pool", TOL_LINEAR, &[x], &[g], |s| Ok(weighted_sum(&avg_pool2d(&s[0], 2)?, &w)))
}

fn check_relu(rng: &mut Rng) -> Result<GradReport> {
    let x = tie_free(rng, [2, 3, 4, 4])?;
    let w = rng_uniform(rng, x.shape(), -1.0, 1.0)?;
    let g = relu_backward(&w, &x)?;
    compare("relu", TOL_LINEAR, &[x], &[g], |s| Ok(weighted_sum(&relu(&s[0]), &w)))
}

fn check_conv1x1(rng: &mut Rng) -> Result<GradReport> {
    let x = tie_free(rng, [2, 3, 4, 4])?;
    let p = Conv1x1Params::<f64>::init(3, 5, rng)?;
    let w = rng_uniform(rng, [2, 5, 4, 4], -1.0, 1.0)?;
    let (gx, gp) = conv1x1_backward(&w, &x, &p)?;
    let state = [x, p.weight.clone(), p.bias.clone()];
    compare("conv1x1", TOL_LINEAR, &state, &[gx, gp.weight, gp.bias], |s| {
        let p = Conv1x1Params {
            weight: s[1].clone(),
            bias: s[2].clone(),
        };
        Ok(weighted_sum(&conv1x1_forward(&s[0], &p)?, &w))
    })
}

fn check_conv3x3(rng: &mut Rng) -> Result<GradReport> {
    let x = tie_free(rng, [2, 2, 5, 4])?;
    let p = Conv3x3Params::<f64>::init(2, 3, rng)?;
    let w = rng_uniform(rng, [2, 3, 5, 4], -1.0, 1.0)?;
    let (gx, gp) = conv3x3_backward(&w, &x, &p)?;
    let state = [x, p.weight.clone()];
    compare("conv3x3", TOL_LINEAR, &state, &[gx, gp.weight], |s| {
        let p = Conv3x3Params { weight: s[1].clone() };
        Ok(weighted_sum(&conv3x3_forward(&s[0], &p)?, &w))
    })
}

fn check_strided(rng: &mut Rng) -> Result<GradReport> {
    let x = tie_free(rng, [2, 3, 4, 4])?;
    let p = StridedConvParams::<f64>::init(3, 3, rng)?;
    let w = rng_uniform(rng, [2, 3, 2, 2], -1.0, 1.0)?;
    let (gx, gp) = strided_conv_backward(&w, &x, &p)?;
    let state = [x, p.weight.clone(), p.bias.clone()];
    compare("strided_conv", TOL_LINEAR, &state, &[gx, gp.weight, gp.bias], |s| {
        let p = StridedConvParams {
            weight: s[1].clone(),
            bias: s[2].clone(),
        };
        Ok(weighted_sum(&strided_conv_downsample(&s[0], &p)?, &w))
    })
}

fn check_upsample(rng: &mut Rng) -> Result<GradReport> {
    let x = tie_free(rng, [1, 2, 3, 3])?;
    let w = rng_uniform(rng, [1, 2, 6, 6], -1.0, 1.0)?;
    let g = upsample2x_backward(&w)?;
    compare("upsample", TOL_LINEAR, &[x], &[g], |s| Ok(weighted_sum(&upsample2x(&s[0]), &w)))
}

fn bn_with(gamma: &Tensor4<f64>, beta: &Tensor4<f64>) -> Result<BatchNormParams<f64>> {
    let mut p = BatchNormParams::new(gamma.len())?;
    p.gamma = gamma.clone();
    p.beta = beta.clone();
    Ok(p)
}

fn check_batchnorm(rng: &mut Rng) -> Result<GradReport> {
    let x = tie_free(rng, [3, 2, 3, 3])?;
    let gamma = rng_uniform(rng, [2, 1, 1, 1], 0.5, 1.5)?;
    let beta = rng_uniform(rng, [2, 1, 1, 1], -0.5, 0.5)?;
    let w = rng_uniform(rng, x.shape(), -1.0, 1.0)?;
    let (_, cache) = batchnorm_forward(&x, &mut bn_with(&gamma, &beta)?, true)?;
    let (gx, gp) = batchnorm_backward(&w, &cache)?;
    compare("batch_norm", TOL_COMPOSITE, &[x, gamma, beta], &[gx, gp.gamma, gp.beta], |s| {
        let (y, _) = batchnorm_forward(&s[0], &mut bn_with(&s[1], &s[2])?, true)?;
        Ok(weighted_sum(&y, &w))
    })
}

fn random_labels(rng: &mut Rng, n: usize, h: usize, w: usize, classes: usize) -> Result<LabelMap> {
    LabelMap::new(n, h, w, (0..n * h * w).map(|_| rng.below(classes) as u8).collect())
}

fn check_loss(rng: &mut Rng) -> Result<GradReport> {
    let logits = rng_uniform(rng, [2, 3, 4, 4], -2.0, 2.0)?;
    let labels = random_labels(rng, 2, 4, 4, 3)?;
    let g = loss_ce_dice(&logits, &labels, 0.5)?.grad;
    compare("loss_ce_dice", TOL_COMPOSITE, &[logits], &[g], |s| {
        Ok(loss_ce_dice(&s[0], &labels, 0.5)?.loss)
    })
}

fn check_hpd(rng: &mut Rng, fusion: Fusion) -> Result<GradReport> {
    let x = tie_free(rng, [2, 2, 4, 4])?;
    let mut p = HpdParams::<f64>::init(2, 4, fusion, rng)?;
    p.bn.gamma = rng_uniform(rng, [4, 1, 1, 1], 0.5, 1.5)?;
    p.bn.beta = rng_uniform(rng, [4, 1, 1, 1], -0.5, 0.5)?;
    let w = rng_uniform(rng, [2, 4, 2, 2], -1.0, 1.0)?;
    let (_, cache) = hpd_forward(&x, &mut p.clone(), 2, true)?;
    let (gx, gp) = hpd_backward(&w, &p, &cache)?;
    let state = [
        x,
        p.conv.weight.clone(),
        p.conv.bias.clone(),
        p.bn.gamma.clone(),
        p.bn.beta.clone(),
    ];
    let grads = [gx, gp.conv.weight, gp.conv.bias, gp.bn.gamma, gp.bn.beta];
    let op = format!("hpd_{}", fusion.as_str());
    compare(&op, TOL_COMPOSITE, &state, &grads, |s| {
        let mut q = p.clone();
        q.conv.weight = s[1].clone();
        q.conv.bias = s[2].clone();
        q.bn.gamma = s[3].clone();
        q.bn.beta = s[4].clone();
        Ok(weighted_sum(&hpd_forward(&s[0], &mut q, 2, true)?.0, &w))
    })
}

fn learnable(p: &NetParams<f64>) -> Vec<Tensor4<f64>> {
    p.tensors()
        .into_iter()
        .filter(|t| t.role.is_learnable())
        .map(|t| t.tensor.clone())
        .collect()
}

fn with_learnable(p: &NetParams<f64>, values: &[Tensor4<f64>]) -> NetParams<f64> {
    let mut q = p.clone();
    let mut it = values.iter();
    for t in q.tensors_mut().into_iter().filter(|t| t.role.is_learnable()) {
        *t.tensor = it.next().expect("one value per learnable tensor").clone();
    }
    q
}

fn check_net(rng: &mut Rng, down: Downsampler) -> Result<GradReport> {
    let mut report = check_net_once(rng, down)?;
    let mut draws = 1;
    while !report.few_kinks() && draws < MAX_DRAWS {
        report = check_net_once(rng, down)?;
        draws += 1;
    }
    report.draws = draws;
    Ok(report)
}

/// Depth-1 network on a `1x1x8x8` input, scalar training loss.
fn check_net_once(rng: &mut Rng, down: Downsampler) -> Result<GradReport> {
    let mut cfg = NetConfig::new(1, 2, 3);
    cfg.downsamplers = vec![down];
    let stream = rng.next_u64();
    let p = build_net::<f64>(&cfg, &rng.fork(stream))?;
    let x = tie_free(rng, [1, 1, 8, 8])?;
    let labels = random_labels(rng, 1, 8, 8, 3)?;
    let (logits, cache) = net_forward(&x, &mut p.clone(), true)?;
    let g = loss_ce_dice(&logits, &labels, 0.5)?.grad;
    let (gx, gp) = net_backward(&g, &p, &cache)?;
    let mut state = vec![x];
    state.extend(learnable(&p));
    let mut grads = vec![gx];
    grads.extend(learnable(&gp));
    compare(&format!("net_{}", down.as_str()), TOL_COMPOSITE, &state, &grads, |s| {
        let mut q = with_learnable(&p, &s[1..]);
        let (y, _) = net_forward(&s[0], &mut q, true)?;
        Ok(loss_ce_dice(&y, &labels, 0.5)?.loss)
    })
}

/// Every check, in a fixed order. Deterministic in `seed`.
pub fn run_all(seed: u64) -> Result<Vec<GradReport>> {
    let root = Rng::new(seed);
    let r = |name: &str| root.fork_named(name);
    Ok(vec![
        check_pool(&mut r("min_pool"), true)?,
        check_pool(&mut r("max_pool"), false)?,
        check_avg_pool(&mut r("avg_pool"))?,
        check_relu(&mut r("relu"))?,
        check_conv1x1(&mut r("conv1x1"))?,
        check_conv3x3(&mut r("conv3x3"))?,
        check_strided(&mut r("strided"))?,
        check_upsample(&mut r("upsample"))?,
        check_batchnorm(&mut r("batch_norm"))?,
        check_loss(&mut r("loss"))?,
        check_hpd(&mut r("hpd_sum"), Fusion::Sum)?,
        check_hpd(&mut r("hpd_concat"), Fusion::Concat)?,
        check_net(&mut r("net_maxpool"), Downsampler::MaxPool)?,
        check_net(&mut r("net_hpd"), Downsampler::Hpd)?,
        check_net(&mut r("net_avgpool"), Downsampler::AvgPool)?,
        check_net(&mut r("net_stridedconv"), Downsampler::StridedConv)?,
    ])
}
