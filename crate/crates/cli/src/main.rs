//! `hpdnet`: dataset generation, training, evaluation, gradient checks,
//! kernel benchmarks and HPD ablation sweeps.
//!
//! Exit status: 0 on success, 1 on usage, configuration or data errors,
//! 2 when an internal invariant fails (e.g. a gradient check).

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const CONFIG_HELP: &str = "File of `key = value` lines; flags override it. \
Keys: depth, base_channels, classes, downsamplers, fusion, num_hpd, \
base_lr, power, weight_decay, batch_size, max_iters, seed, loss_mix, eval_every, workers, \
n_train, n_val, size";

#[derive(Parser, Debug)]
#[command(name = "hpdnet", version, about = "Hybrid min/max pooling downsampling for segmentation networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic segmentation dataset.
    GenData(GenDataArgs),
    /// Train a network and write a checkpoint and metric log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckArgs),
    /// Time pooling kernels and print the params/FLOPs table.
    Bench(BenchArgs),
    /// Train one network per number of HPD stages and tabulate mDSC.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, help = CONFIG_HELP)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Training samples [default: 300].
    #[arg(long = "train")]
    n_train: Option<usize>,
    /// Validation samples [default: 50].
    #[arg(long = "val")]
    n_val: Option<usize>,
    /// Image side length [default: 64].
    #[arg(long)]
    size: Option<usize>,
    /// Number of classes including background [default: 4].
    #[arg(long)]
    classes: Option<usize>,
}

/// Network and optimizer settings shared by `train` and `ablate`.
#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, help = CONFIG_HELP)]
    config: Option<PathBuf>,
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// SGD iterations [default: 200].
    #[arg(long)]
    iters: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 0.01]
    #[arg(long)]
    base_lr: Option<f64>,
    /// Poly schedule exponent [default: 0.9].
    #[arg(long)]
    power: Option<f64>,
    /// [default: 1e-4]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Cross-entropy weight in the loss; Dice gets the rest [default: 0.5].
    #[arg(long)]
    loss_mix: Option<f64>,
    /// Validate every N iterations, 0 for only at the end [default: 50].
    #[arg(long)]
    eval_every: Option<usize>,
    /// Evaluation threads [default: 1].
    #[arg(long)]
    workers: Option<usize>,
    /// Downsampling stages [default: 3].
    #[arg(long)]
    depth: Option<usize>,
    /// Width of the first encoder stage [default: 16].
    #[arg(long)]
    base_channels: Option<usize>,
    /// Class count; defaults to the dataset's.
    #[arg(long)]
    classes: Option<usize>,
    /// sum or concat [default: sum].
    #[arg(long)]
    fusion: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("seed", self.seed.map(|v| v.to_string())),
            ("max_iters", self.iters.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("base_lr", self.base_lr.map(|v| v.to_string())),
            ("power", self.power.map(|v| v.to_string())),
            ("weight_decay", self.weight_decay.map(|v| v.to_string())),
            ("loss_mix", self.loss_mix.map(|v| v.to_string())),
            ("eval_every", self.eval_every.map(|v| v.to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
            ("depth", self.depth.map(|v| v.to_string())),
            ("base_channels", self.base_channels.map(|v| v.to_string())),
            ("classes", self.classes.map(|v| v.to_string())),
            ("fusion", self.fusion.clone()),
        ]
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of leading HPD stages; the rest use max pooling [default: 0].
    #[arg(long)]
    num_hpd: Option<usize>,
    /// Per-stage list, e.g. `hpd,maxpool,avgpool` (maxpool, hpd, avgpool, stridedconv).
    #[arg(long)]
    downsamplers: Option<String>,
    /// Write overlay PNGs for the first N validation samples.
    #[arg(long, default_value_t = 0)]
    overlays: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// train or val.
    #[arg(long, default_value = "val")]
    split: String,
    /// Evaluation threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Directory for the report and overlays.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write overlay PNGs for the first N samples (needs --out).
    #[arg(long, default_value_t = 0)]
    overlays: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Timed repetitions per kernel.
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Input side length for the params/FLOPs table.
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated numbers of leading HPD stages.
    #[arg(long, default_value = "0,1,2,3")]
    num_hpd: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Bench(a) => commands::bench(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                hpdnet::Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
