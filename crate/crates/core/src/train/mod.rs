//! Loss, Dice metrics, SGD with a poly learning-rate schedule, the
//! training loop and ablation sweeps.

mod ablate;
mod loss;
mod metrics;

pub use ablate::{ablate, AblationRow, AblationTable};
pub use loss::{loss_ce_dice, LossOutput, DICE_SMOOTH};
pub use metrics::{dsc, mdsc, ConfusionCounts};

use std::fmt;
use std::fmt::Write as _;

use crate::data::{Dataset, LabelMap, SegSample};
use crate::error::{Error, Result};
use crate::net::{build_net, net_backward, net_forward, NetConfig, NetParams, ParamRole};
use crate::rng::Rng;
use crate::tensor::Scalar;

/// Samples per forward pass during evaluation.
const EVAL_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub power: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Weight of cross-entropy; soft Dice gets `1 - loss_mix`.
    pub loss_mix: f64,
    /// Evaluate every this many iterations (0: only after the last one).
    pub eval_every: usize,
    /// Threads used by evaluation. Training itself is single-threaded.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.01,
            power: 0.9,
            weight_decay: 1e-4,
            batch_size: 8,
            max_iters: 200,
            seed: 0,
            loss_mix: 0.5,
            eval_every: 50,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 9] = [
        "base_lr",
        "power",
        "weight_decay",
        "batch_size",
        "max_iters",
        "seed",
        "loss_mix",
        "eval_every",
        "workers",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be > 0, got {}", self.base_lr));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return bad(format!("power must be > 0, got {}", self.power));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.loss_mix) {
            return bad(format!("loss_mix must be in [0, 1], got {}", self.loss_mix));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2 for batch norm, got {}", self.batch_size));
        }
        if self.workers < 1 {
            return bad("workers must be >= 1".into());
        }
        Ok(())
    }

    /// Set one field from its text form. Returns `Ok(false)` for keys that
    /// are not training keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "base_lr" => self.base_lr = parse(key, value)?,
            "power" => self.power = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "loss_mix" => self.loss_mix = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "base_lr = {}", self.base_lr);
        let _ = writeln!(s, "power = {}", self.power);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_iters = {}", self.max_iters);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "loss_mix = {}", self.loss_mix);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "workers = {}", self.workers);
        s
    }
}

/// `base_lr * (1 - iter / max_iters)^power`.
pub fn poly_lr(iter: usize, max_iters: usize, cfg: &TrainConfig) -> Result<f64> {
    if max_iters == 0 {
        return Err(Error::Argument("poly schedule needs max_iters >= 1".into()));
    }
    if iter > max_iters {
        return Err(Error::Argument(format!("iteration {iter} beyond max_iters {max_iters}")));
    }
    Ok(cfg.base_lr * (1.0 - iter as f64 / max_iters as f64).powf(cfg.power))
}

/// `theta -= lr * (g + wd * theta)` for learnable tensors. Weight decay
/// applies to convolution weights only; running statistics are untouched.
pub fn sgd_step<T: Scalar>(params: &mut NetParams<T>, grads: &NetParams<T>, lr: f64, weight_decay: f64) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    if g.len() != p.len() {
        return Err(Error::Shape("gradients do not match the parameter structure".into()));
    }
    for (p, g) in p.iter_mut().zip(&g) {
        if p.tensor.shape() != g.tensor.shape() || p.name != g.name {
            return Err(Error::Shape(format!("gradient {} does not match parameter {}", g.name, p.name)));
        }
    }
    let lr_t = T::of_f64(lr);
    for (p, g) in p.iter_mut().zip(&g) {
        if !p.role.is_learnable() {
            continue;
        }
        let wd = if p.role == ParamRole::ConvWeight { T::of_f64(weight_decay) } else { T::zero() };
        for (t, &d) in p.tensor.data_mut().iter_mut().zip(g.tensor.data()) {
            *t = *t - lr_t * (d + wd * *t);
        }
    }
    Ok(())
}

/// Mean per-image Dice over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mdsc: f64,
    /// Mean per-image Dice for each class, background included.
    pub per_class: Vec<f64>,
    pub images: usize,
}

fn predict_chunk(params: &NetParams<f32>, samples: &[SegSample], classes: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    let mut p = params.clone();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&SegSample> = chunk.iter().collect();
        let (x, gt) = Dataset::batch(&refs)?;
        let (logits, _) = net_forward(&x, &mut p, false)?;
        let pred = LabelMap::argmax(&logits)?;
        for i in 0..chunk.len() {
            out.push(mdsc(&pred.sample(i), &gt.sample(i), classes)?);
        }
    }
    Ok(out)
}

/// Inference-mode evaluation, split over `workers` threads. The result
/// does not depend on the worker count.
pub fn evaluate(params: &NetParams<f32>, samples: &[SegSample], workers: usize) -> Result<EvalReport> {
    let classes = params.config.classes;
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate on zero samples".into()));
    }
    let workers = workers.clamp(1, samples.len());
    let per_image: Vec<(f64, Vec<f64>)> = if workers == 1 {
        predict_chunk(params, samples, classes)?
    } else {
        let size = samples.len().div_ceil(workers);
        let parts: Vec<Result<Vec<(f64, Vec<f64>)>>> = std::thread::scope(|s| {
            let handles: Vec<_> = samples
                .chunks(size)
                .map(|c| s.spawn(move || predict_chunk(params, c, classes)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        let mut all = Vec::with_capacity(samples.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    let n = per_image.len() as f64;
    let mut per_class = vec![0.0; classes];
    let mut total = 0.0;
    for (m, per) in &per_image {
        total += m;
        for (acc, v) in per_class.iter_mut().zip(per) {
            *acc += v;
        }
    }
    per_class.iter_mut().for_each(|v| *v /= n);
    Ok(EvalReport {
        mdsc: total / n,
        per_class,
        images: per_image.len(),
    })
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    /// 1-based: the record for `iter = t` follows `t` optimizer steps.
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    pub mdsc: Option<f64>,
}

impl fmt::Display for MetricRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "iter={} lr={} loss={}", self.iter, self.lr, self.loss)?;
        if let Some(m) = self.mdsc {
            write!(f, " mdsc={m}")?;
        }
        Ok(())
    }
}

/// The split periodic evaluation uses: validation, or train when there is
/// no validation split.
pub fn eval_split(ds: &Dataset) -> &[SegSample] {
    if ds.val.is_empty() {
        &ds.train
    } else {
        &ds.val
    }
}

fn check_setup(net_cfg: &NetConfig, cfg: &TrainConfig, ds: &Dataset) -> Result<()> {
    net_cfg.validate()?;
    cfg.validate()?;
    ds.validate()?;
    if ds.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if ds.classes != net_cfg.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, network {}",
            ds.classes, net_cfg.classes
        )));
    }
    if ds.train.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training samples",
            cfg.batch_size,
            ds.train.len()
        )));
    }
    net_cfg.check_input(ds.train[0].image.shape())
}

/// [`train`] with a callback invoked on every record as it is produced.
pub fn train_with(
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    ds: &Dataset,
    mut on_record: impl FnMut(&MetricRecord),
) -> Result<(NetParams<f32>, Vec<MetricRecord>)> {
    check_setup(net_cfg, cfg, ds)?;
    let root = Rng::new(cfg.seed);
    let mut params = build_net::<f32>(net_cfg, &root.fork_named("init"))?;
    let mut order_rng = root.fork_named("batches");
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    order_rng.shuffle(&mut order);
    let mut cursor = 0;
    let mut history = Vec::with_capacity(cfg.max_iters);
    for t in 0..cfg.max_iters {
        if cursor + cfg.batch_size > order.len() {
            order_rng.shuffle(&mut order);
            cursor = 0;
        }
        let batch: Vec<&SegSample> = order[cursor..cursor + cfg.batch_size].iter().map(|&i| &ds.train[i]).collect();
        cursor += cfg.batch_size;
        let (x, labels) = Dataset::batch(&batch)?;
        let lr = poly_lr(t, cfg.max_iters, cfg)?;
        let (logits, cache) = net_forward(&x, &mut params, true)?;
        let loss = loss_ce_dice(&logits, &labels, cfg.loss_mix)?;
        if !loss.loss.is_finite() {
            return Err(Error::Data(format!("loss became {} at iteration {}", loss.loss, t + 1)));
        }
        let (_, grads) = net_backward(&loss.grad, &params, &cache)?;
        sgd_step(&mut params, &grads, lr, cfg.weight_decay)?;

        let iter = t + 1;
        let due = iter == cfg.max_iters || (cfg.eval_every > 0 && iter % cfg.eval_every == 0);
        let mdsc = if due {
            Some(evaluate(&params, eval_split(ds), cfg.workers)?.mdsc)
        } else {
            None
        };
        let rec = MetricRecord {
            iter,
            lr,
            loss: loss.loss,
            mdsc,
        };
        on_record(&rec);
        history.push(rec);
    }
    Ok((params, history))
}

/// Train for `cfg.max_iters` SGD steps. Deterministic in `(net_cfg, cfg, ds)`.
pub fn train(net_cfg: &NetConfig, cfg: &TrainConfig, ds: &Dataset) -> Result<(NetParams<f32>, Vec<MetricRecord>)> {
    train_with(net_cfg, cfg, ds, |_| {})
}
