//! Parameter and FLOP accounting.
//!
//! FLOP convention (per sample, multiplied by batch size):
//!
//! | operation            | cost                                   |
//! |----------------------|----------------------------------------|
//! | multiply-accumulate  | 2                                      |
//! | bias add             | 1 per output element                   |
//! | batch norm           | 2 per element                          |
//! | ReLU                 | 1 per element                          |
//! | min/max pooling      | `k*k - 1` comparisons per output       |
//! | average pooling      | `k*k - 1` adds + 1 divide per output   |
//! | min+max fusion       | 1 add per output                       |
//! | upsample, concat     | 0                                      |

use crate::error::Result;
use crate::hpd::Fusion;
use crate::tensor::{Scalar, Shape4};

use super::{Downsampler, NetConfig, NetParams};

/// Learnable scalars: conv weights and biases, batch-norm gamma and beta.
/// Running statistics are excluded.
pub fn count_params<T: Scalar>(p: &NetParams<T>) -> usize {
    p.tensors()
        .iter()
        .filter(|t| t.role.is_learnable())
        .map(|t| t.tensor.len())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

fn conv3x3(name: String, c_in: usize, c_out: usize, hw: usize) -> LayerCost {
    let (ci, co, hw) = (c_in as u64, c_out as u64, hw as u64);
    LayerCost {
        name,
        params: 9 * ci * co,
        flops: 2 * 9 * ci * co * hw,
    }
}

fn bn_relu(name: String, c: usize, hw: usize) -> LayerCost {
    LayerCost {
        name,
        params: 2 * c as u64,
        flops: 3 * (c * hw) as u64,
    }
}

fn cbr(out: &mut Vec<LayerCost>, name: &str, c_in: usize, c_out: usize, hw: usize) {
    out.push(conv3x3(format!("{name}.conv"), c_in, c_out, hw));
    out.push(bn_relu(format!("{name}.bn_relu"), c_out, hw));
}

/// Per-layer parameter and FLOP counts for a single input sample of
/// spatial size `h x w`.
pub fn layer_costs(cfg: &NetConfig, h: usize, w: usize) -> Result<Vec<LayerCost>> {
    cfg.validate()?;
    cfg.check_input([1, cfg.in_channels, h, w])?;
    let d = cfg.depth;
    let mut out = Vec::new();
    let mut c_in = cfg.in_channels;
    let hw_at = |i: usize| (h >> i) * (w >> i);
    for i in 0..d {
        let ci = cfg.stage_channels(i);
        let hw = hw_at(i);
        cbr(&mut out, &format!("enc{i}.first"), c_in, ci, hw);
        cbr(&mut out, &format!("enc{i}.second"), ci, ci, hw);
        let ohw = hw_at(i + 1) as u64;
        let c = ci as u64;
        let name = format!("down{i}.{}", cfg.downsamplers[i]);
        out.push(match cfg.downsamplers[i] {
            Downsampler::MaxPool => LayerCost { name, params: 0, flops: 3 * c * ohw },
            Downsampler::AvgPool => LayerCost { name, params: 0, flops: 4 * c * ohw },
            Downsampler::StridedConv => LayerCost {
                name,
                params: 4 * c * c + c,
                flops: (2 * 4 * c * c + c) * ohw,
            },
            Downsampler::Hpd => {
                let co = cfg.stage_channels(i + 1) as u64;
                let (enc_c, encode) = match cfg.fusion {
                    Fusion::Sum => (c, 7 * c * ohw),
                    Fusion::Concat => (2 * c, 6 * c * ohw),
                };
                LayerCost {
                    name,
                    params: enc_c * co + co + 2 * co,
                    flops: encode + (2 * enc_c * co + co) * ohw + 3 * co * ohw,
                }
            }
        });
        c_in = cfg.down_out_channels(i);
    }
    let cd = cfg.stage_channels(d);
    cbr(&mut out, &format!("enc{d}.first"), c_in, cd, hw_at(d));
    cbr(&mut out, &format!("enc{d}.second"), cd, cd, hw_at(d));
    for i in (0..d).rev() {
        let ci = cfg.stage_channels(i);
        let hw = hw_at(i);
        cbr(&mut out, &format!("up{i}"), cfg.stage_channels(i + 1), ci, hw);
        cbr(&mut out, &format!("dec{i}.first"), 2 * ci, ci, hw);
        cbr(&mut out, &format!("dec{i}.second"), ci, ci, hw);
    }
    let (c0, k) = (cfg.stage_channels(0) as u64, cfg.classes as u64);
    out.push(LayerCost {
        name: "head".into(),
        params: c0 * k + k,
        flops: (2 * c0 * k + k) * hw_at(0) as u64,
    });
    Ok(out)
}

/// Total FLOPs of one forward pass over a batch of `input` shape.
pub fn count_flops(cfg: &NetConfig, input: Shape4) -> Result<u64> {
    cfg.check_input(input)?;
    let [n, _, h, w] = input;
    Ok(layer_costs(cfg, h, w)?.iter().map(|l| l.flops).sum::<u64>() * n as u64)
}
