//! Miniature U-Net with a pluggable downsampler per encoder stage.
//!
//! Layout for `depth = D` and base width `C`, with `C_i = C * 2^i`:
//!
//! ```text
//! enc0: in -> C_0          (two conv3x3+BN+ReLU)
//! down0                    (maxpool | avgpool | stridedconv keep C_0; hpd maps C_0 -> C_1)
//! enc1: down0_out -> C_1
//! ...
//! encD (bottleneck): down{D-1}_out -> C_D
//! upI:  nearest 2x, conv3x3+BN+ReLU C_{I+1} -> C_I
//! decI: concat(encI, upI) = 2 C_I -> C_I
//! head: 1x1 conv C_0 -> classes
//! ```
//!
//! Every parameter tensor is initialized from its own generator stream keyed
//! by the tensor's name, so changing one stage leaves all unrelated tensors
//! bit-identical.

mod cost;
pub mod layers;

use std::fmt::Write as _;

pub use cost::{count_flops, count_params, layer_costs, LayerCost};
use layers::{
    upsample2x, upsample2x_backward, ConvBlock, ConvBlockCache, ConvBnRelu, ConvBnReluCache,
};

use crate::error::{Error, Result};
use crate::hpd::{concat_channels, hpd_backward, hpd_forward, split_channels, Fusion, HpdCache, HpdParams};
use crate::ops::{
    avg_pool2d, avg_pool_backward, conv1x1_backward, conv1x1_forward, max_pool2d, pool_backward,
    strided_conv_backward, strided_conv_downsample, BatchNormParams, Conv1x1Params, PoolIndices, StridedConvParams,
};
use crate::rng::Rng;
use crate::tensor::{Scalar, Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Downsampler {
    MaxPool,
    Hpd,
    AvgPool,
    StridedConv,
}

impl Downsampler {
    pub fn as_str(self) -> &'static str {
        match self {
            Downsampler::MaxPool => "maxpool",
            Downsampler::Hpd => "hpd",
            Downsampler::AvgPool => "avgpool",
            Downsampler::StridedConv => "stridedconv",
        }
    }
}

impl std::str::FromStr for Downsampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "maxpool" => Ok(Downsampler::MaxPool),
            "hpd" => Ok(Downsampler::Hpd),
            "avgpool" => Ok(Downsampler::AvgPool),
            "stridedconv" => Ok(Downsampler::StridedConv),
            other => Err(Error::Config(format!(
                "unknown downsampler {other:?} (maxpool|hpd|avgpool|stridedconv)"
            ))),
        }
    }
}

impl std::fmt::Display for Downsampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub classes: usize,
    /// One entry per encoder stage.
    pub downsamplers: Vec<Downsampler>,
    /// Fusion mode of every HPD stage.
    pub fusion: Fusion,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::new(3, 16, 4)
    }
}

impl NetConfig {
    /// Grayscale input, max pooling at every stage, sum fusion.
    pub fn new(depth: usize, base_channels: usize, classes: usize) -> Self {
        Self {
            depth,
            base_channels,
            in_channels: 1,
            classes,
            downsamplers: vec![Downsampler::MaxPool; depth],
            fusion: Fusion::Sum,
        }
    }

    /// First `num_hpd` stages use HPD, the rest max pooling.
    pub fn with_num_hpd(mut self, num_hpd: usize) -> Result<Self> {
        if num_hpd > self.depth {
            return Err(Error::Config(format!(
                "num_hpd {num_hpd} exceeds depth {}",
                self.depth
            )));
        }
        self.downsamplers = (0..self.depth)
            .map(|i| if i < num_hpd { Downsampler::Hpd } else { Downsampler::MaxPool })
            .collect();
        Ok(self)
    }

    pub fn with_fusion(mut self, fusion: Fusion) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn num_hpd(&self) -> usize {
        self.downsamplers.iter().filter(|d| **d == Downsampler::Hpd).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.base_channels < 1 || self.in_channels < 1 {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need >= 2 classes, got {}", self.classes)));
        }
        if self.downsamplers.len() != self.depth {
            return Err(Error::Config(format!(
                "{} downsamplers for depth {}",
                self.downsamplers.len(),
                self.depth
            )));
        }
        if self.base_channels.checked_shl(self.depth as u32 + 1).is_none() || self.depth > 16 {
            return Err(Error::Config("depth too large".into()));
        }
        Ok(())
    }

    /// Width of encoder stage `i` (the bottleneck is stage `depth`).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Channels leaving downsampler `i`.
    pub fn down_out_channels(&self, i: usize) -> usize {
        match self.downsamplers[i] {
            Downsampler::Hpd => self.stage_channels(i + 1),
            _ => self.stage_channels(i),
        }
    }

    pub fn check_input(&self, shape: Shape4) -> Result<()> {
        let [_, c, h, w] = shape;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let m = 1usize << self.depth;
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by 2^{} = {m}",
                self.depth
            )));
        }
        Ok(())
    }

    /// `key = value` lines, parseable by [`NetConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let downs: Vec<&str> = self.downsamplers.iter().map(|d| d.as_str()).collect();
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "base_channels = {}", self.base_channels);
        let _ = writeln!(s, "in_channels = {}", self.in_channels);
        let _ = writeln!(s, "classes = {}", self.classes);
        let _ = writeln!(s, "downsamplers = {}", downs.join(","));
        let _ = writeln!(s, "fusion = {}", self.fusion);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = NetConfig::default();
        let mut downs = None;
        for (key, value) in parse_key_values(text)? {
            let num = || {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("{key}: expected integer, got {value:?}")))
            };
            match key.as_str() {
                "depth" => cfg.depth = num()?,
                "base_channels" => cfg.base_channels = num()?,
                "in_channels" => cfg.in_channels = num()?,
                "classes" => cfg.classes = num()?,
                "fusion" => cfg.fusion = value.parse()?,
                "downsamplers" => {
                    downs = Some(
                        value
                            .split(',')
                            .map(str::parse)
                            .collect::<Result<Vec<Downsampler>>>()?,
                    )
                }
                other => return Err(Error::Config(format!("unknown network key {other:?}"))),
            }
        }
        cfg.downsamplers = downs.unwrap_or_else(|| vec![Downsampler::MaxPool; cfg.depth]);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DownParams<T> {
    MaxPool,
    AvgPool,
    Hpd(HpdParams<T>),
    StridedConv(StridedConvParams<T>),
}

/// How an optimizer should treat a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    ConvWeight,
    Bias,
    BnGamma,
    BnBeta,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn is_learnable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }
}

pub struct NamedParam<'a, T> {
    pub name: String,
    pub role: ParamRole,
    pub tensor: &'a Tensor4<T>,
}

pub struct NamedParamMut<'a, T> {
    pub name: String,
    pub role: ParamRole,
    pub tensor: &'a mut Tensor4<T>,
}

/// Network weights. The same structure also carries gradients, in which
/// case running statistics are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub config: NetConfig,
    /// `depth + 1` blocks; the last one is the bottleneck.
    pub enc: Vec<ConvBlock<T>>,
    pub down: Vec<DownParams<T>>,
    pub up: Vec<ConvBnRelu<T>>,
    pub dec: Vec<ConvBlock<T>>,
    pub head: Conv1x1Params<T>,
}

fn init_conv_bn_relu<T: Scalar>(root: &Rng, name: &str, c_in: usize, c_out: usize) -> Result<ConvBnRelu<T>> {
    ConvBnRelu::init(c_in, c_out, &mut root.fork_named(&format!("{name}.conv.weight")))
}

fn init_block<T: Scalar>(root: &Rng, name: &str, c_in: usize, c_out: usize) -> Result<ConvBlock<T>> {
    Ok(ConvBlock {
        first: init_conv_bn_relu(root, &format!("{name}.first"), c_in, c_out)?,
        second: init_conv_bn_relu(root, &format!("{name}.second"), c_out, c_out)?,
    })
}

/// Build and initialize a network. Deterministic in `(cfg, rng.seed())`.
pub fn build_net<T: Scalar>(cfg: &NetConfig, rng: &Rng) -> Result<NetParams<T>> {
    cfg.validate()?;
    let d = cfg.depth;
    let mut enc = Vec::with_capacity(d + 1);
    let mut down = Vec::with_capacity(d);
    let mut c_in = cfg.in_channels;
    for i in 0..d {
        enc.push(init_block(rng, &format!("enc{i}"), c_in, cfg.stage_channels(i))?);
        let ci = cfg.stage_channels(i);
        down.push(match cfg.downsamplers[i] {
            Downsampler::MaxPool => DownParams::MaxPool,
            Downsampler::AvgPool => DownParams::AvgPool,
            Downsampler::Hpd => DownParams::Hpd(HpdParams::init(
                ci,
                cfg.stage_channels(i + 1),
                cfg.fusion,
                &mut rng.fork_named(&format!("down{i}.conv.weight")),
            )?),
            Downsampler::StridedConv => DownParams::StridedConv(StridedConvParams::init(
                ci,
                ci,
                &mut rng.fork_named(&format!("down{i}.strided.weight")),
            )?),
        });
        c_in = cfg.down_out_channels(i);
    }
    enc.push(init_block(rng, &format!("enc{d}"), c_in, cfg.stage_channels(d))?);
    let mut up = Vec::with_capacity(d);
    let mut dec = Vec::with_capacity(d);
    for i in 0..d {
        let ci = cfg.stage_channels(i);
        up.push(init_conv_bn_relu(rng, &format!("up{i}"), cfg.stage_channels(i + 1), ci)?);
        dec.push(init_block(rng, &format!("dec{i}"), 2 * ci, ci)?);
    }
    let head = Conv1x1Params::init(
        cfg.stage_channels(0),
        cfg.classes,
        &mut rng.fork_named("head.weight"),
    )?;
    Ok(NetParams {
        config: cfg.clone(),
        enc,
        down,
        up,
        dec,
        head,
    })
}

// Shared body of `tensors` and `tensors_mut`; `$m` is either nothing or `mut`.
macro_rules! collect_tensors {
    ($self:ident, $Ty:ident, $iter:ident $(, $m:tt)?) => {{
        fn push_bn<'a, T>(out: &mut Vec<$Ty<'a, T>>, name: &str, bn: &'a $($m)? BatchNormParams<T>) {
            let BatchNormParams { gamma, beta, running_mean, running_var, .. } = bn;
            out.push($Ty { name: format!("{name}.gamma"), role: ParamRole::BnGamma, tensor: gamma });
            out.push($Ty { name: format!("{name}.beta"), role: ParamRole::BnBeta, tensor: beta });
            out.push($Ty { name: format!("{name}.running_mean"), role: ParamRole::RunningMean, tensor: running_mean });
            out.push($Ty { name: format!("{name}.running_var"), role: ParamRole::RunningVar, tensor: running_var });
        }
        fn push_cbr<'a, T>(out: &mut Vec<$Ty<'a, T>>, name: &str, l: &'a $($m)? ConvBnRelu<T>) {
            let ConvBnRelu { conv, bn } = l;
            out.push($Ty { name: format!("{name}.conv.weight"), role: ParamRole::ConvWeight, tensor: & $($m)? conv.weight });
            push_bn(out, &format!("{name}.bn"), bn);
        }
        fn push_block<'a, T>(out: &mut Vec<$Ty<'a, T>>, name: &str, b: &'a $($m)? ConvBlock<T>) {
            let ConvBlock { first, second } = b;
            push_cbr(out, &format!("{name}.first"), first);
            push_cbr(out, &format!("{name}.second"), second);
        }

        let NetParams { enc, down, up, dec, head, .. } = $self;
        let mut out = Vec::new();
        for (i, b) in enc.$iter().enumerate() {
            push_block(&mut out, &format!("enc{i}"), b);
        }
        for (i, d) in down.$iter().enumerate() {
            match d {
                DownParams::MaxPool | DownParams::AvgPool => {}
                DownParams::Hpd(h) => {
                    let HpdParams { conv, bn, .. } = h;
                    out.push($Ty { name: format!("down{i}.conv.weight"), role: ParamRole::ConvWeight, tensor: & $($m)? conv.weight });
                    out.push($Ty { name: format!("down{i}.conv.bias"), role: ParamRole::Bias, tensor: & $($m)? conv.bias });
                    push_bn(&mut out, &format!("down{i}.bn"), bn);
                }
                DownParams::StridedConv(s) => {
                    let StridedConvParams { weight, bias } = s;
                    out.push($Ty { name: format!("down{i}.strided.weight"), role: ParamRole::ConvWeight, tensor: weight });
                    out.push($Ty { name: format!("down{i}.strided.bias"), role: ParamRole::Bias, tensor: bias });
                }
            }
        }
        for (i, l) in up.$iter().enumerate() {
            push_cbr(&mut out, &format!("up{i}"), l);
        }
        for (i, b) in dec.$iter().enumerate() {
            push_block(&mut out, &format!("dec{i}"), b);
        }
        let Conv1x1Params { weight, bias } = head;
        out.push($Ty { name: "head.weight".into(), role: ParamRole::ConvWeight, tensor: weight });
        out.push($Ty { name: "head.bias".into(), role: ParamRole::Bias, tensor: bias });
        out
    }};
}

impl<T: Scalar> NetParams<T> {
    /// Every tensor (including running statistics) under a stable name, in
    /// a fixed order.
    pub fn tensors(&self) -> Vec<NamedParam<'_, T>> {
        collect_tensors!(self, NamedParam, iter)
    }

    pub fn tensors_mut(&mut self) -> Vec<NamedParamMut<'_, T>> {
        collect_tensors!(self, NamedParamMut, iter_mut, mut)
    }

    /// Same structure with every tensor zeroed; the gradient container.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.tensors_mut() {
            p.tensor.data_mut().fill(T::zero());
        }
        z
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Accumulate `other` into `self`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        let src = other.tensors();
        let mut dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::Shape("parameter sets differ in structure".into()));
        }
        for (d, s) in dst.iter_mut().zip(&src) {
            d.tensor.add_assign(s.tensor)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum DownCache<T> {
    Max(PoolIndices),
    Avg(Shape4),
    Hpd(HpdCache<T>),
    Strided(Tensor4<T>),
}

/// Activations retained by [`net_forward`] for [`net_backward`].
#[derive(Debug, Clone)]
pub struct NetCache<T> {
    training: bool,
    enc: Vec<ConvBlockCache<T>>,
    down: Vec<DownCache<T>>,
    up: Vec<ConvBnReluCache<T>>,
    dec: Vec<ConvBlockCache<T>>,
    head_input: Tensor4<T>,
    bottleneck_shape: Shape4,
}

impl<T> NetCache<T> {
    /// Shape of the bottleneck activation, `(n, C_depth, h / 2^d, w / 2^d)`.
    pub fn bottleneck_shape(&self) -> Shape4 {
        self.bottleneck_shape
    }
}

/// Logits of shape `(n, classes, h, w)`.
pub fn net_forward<T: Scalar>(
    x: &Tensor4<T>,
    p: &mut NetParams<T>,
    training: bool,
) -> Result<(Tensor4<T>, NetCache<T>)> {
    p.config.check_input(x.shape())?;
    let d = p.config.depth;
    let mut enc_c = Vec::with_capacity(d + 1);
    let mut down_c = Vec::with_capacity(d);
    let mut skips = Vec::with_capacity(d);
    let mut h = x.clone();
    for i in 0..d {
        let (y, c) = p.enc[i].forward(h, training)?;
        enc_c.push(c);
        let (next, dc) = match &mut p.down[i] {
            DownParams::MaxPool => {
                let (o, idx) = max_pool2d(&y, 2)?;
                (o, DownCache::Max(idx))
            }
            DownParams::AvgPool => (avg_pool2d(&y, 2)?, DownCache::Avg(y.shape())),
            DownParams::Hpd(hp) => {
                let (o, c) = hpd_forward(&y, hp, 2, training)?;
                (o, DownCache::Hpd(c))
            }
            DownParams::StridedConv(sp) => (strided_conv_downsample(&y, sp)?, DownCache::Strided(y.clone())),
        };
        down_c.push(dc);
        skips.push(y);
        h = next;
    }
    let (mut h, c) = p.enc[d].forward(h, training)?;
    enc_c.push(c);
    let bottleneck_shape = h.shape();

    let mut up_c: Vec<Option<ConvBnReluCache<T>>> = (0..d).map(|_| None).collect();
    let mut dec_c: Vec<Option<ConvBlockCache<T>>> = (0..d).map(|_| None).collect();
    for i in (0..d).rev() {
        let (u, uc) = p.up[i].forward(upsample2x(&h), training)?;
        let cat = concat_channels(&skips[i], &u)?;
        let (y, dc) = p.dec[i].forward(cat, training)?;
        up_c[i] = Some(uc);
        dec_c[i] = Some(dc);
        h = y;
    }
    let logits = conv1x1_forward(&h, &p.head)?;
    Ok((
        logits,
        NetCache {
            training,
            enc: enc_c,
            down: down_c,
            up: up_c.into_iter().map(|c| c.expect("filled")).collect(),
            dec: dec_c.into_iter().map(|c| c.expect("filled")).collect(),
            head_input: h,
            bottleneck_shape,
        },
    ))
}

/// Returns `(grad_input, grads)` for a training-mode cache.
pub fn net_backward<T: Scalar>(
    grad_logits: &Tensor4<T>,
    p: &NetParams<T>,
    cache: &NetCache<T>,
) -> Result<(Tensor4<T>, NetParams<T>)> {
    if !cache.training {
        return Err(Error::Usage("network backward needs a training-mode forward cache".into()));
    }
    let d = p.config.depth;
    if cache.enc.len() != d + 1 {
        return Err(Error::Usage("cache was produced by a different network".into()));
    }
    let mut grads = p.zeros_like();
    let (mut g, head) = conv1x1_backward(grad_logits, &cache.head_input, &p.head)?;
    grads.head = head;

    let mut skip_grads = Vec::with_capacity(d);
    for i in 0..d {
        let (g_cat, gb) = p.dec[i].backward(&g, &cache.dec[i])?;
        grads.dec[i] = gb;
        let (g_skip, g_up) = split_channels(&g_cat, p.config.stage_channels(i))?;
        let (g_u, gu) = p.up[i].backward(&g_up, &cache.up[i])?;
        grads.up[i] = gu;
        g = upsample2x_backward(&g_u)?;
        skip_grads.push(g_skip);
    }
    let (mut g, gb) = p.enc[d].backward(&g, &cache.enc[d])?;
    grads.enc[d] = gb;
    for i in (0..d).rev() {
        let mut gy = match (&p.down[i], &cache.down[i]) {
            (DownParams::MaxPool, DownCache::Max(idx)) => pool_backward(&g, idx, idx.input_shape())?,
            (DownParams::AvgPool, DownCache::Avg(shape)) => avg_pool_backward(&g, 2, *shape)?,
            (DownParams::Hpd(hp), DownCache::Hpd(c)) => {
                let (gx, gh) = hpd_backward(&g, hp, c)?;
                grads.down[i] = DownParams::Hpd(gh);
                gx
            }
            (DownParams::StridedConv(sp), DownCache::Strided(input)) => {
                let (gx, gs) = strided_conv_backward(&g, input, sp)?;
                grads.down[i] = DownParams::StridedConv(gs);
                gx
            }
            _ => return Err(Error::Usage(format!("downsampler {i} does not match its cache"))),
        };
        gy.add_assign(&skip_grads[i])?;
        let (gx, gb) = p.enc[i].backward(&gy, &cache.enc[i])?;
        grads.enc[i] = gb;
        g = gx;
    }
    Ok((g, grads))
}

#[cfg(test)]
mod tests;
