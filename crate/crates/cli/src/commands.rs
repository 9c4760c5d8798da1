use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use hpdnet::data::{emit_overlay, load_checkpoint, read_dataset, save_checkpoint, write_dataset, Dataset, LabelMap};
use hpdnet::gradcheck::run_all;
use hpdnet::hpd::Fusion;
use hpdnet::net::{count_flops, count_params, build_net, net_forward, Downsampler, NetConfig, NetParams};
use hpdnet::ops::pool::naive;
use hpdnet::ops::{avg_pool2d, pool2d, Padding, PoolKind};
use hpdnet::train::{ablate as run_ablation, evaluate, train_with, EvalReport};
use hpdnet::{rng_uniform, Error, Result, Rng, Tensor4};

use crate::settings::Settings;
use crate::{AblateArgs, BenchArgs, EvalArgs, GenDataArgs, GradcheckArgs, RunArgs, TrainArgs};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn announce(title: &str, text: &str) {
    println!("# {title}");
    print!("{text}");
    println!();
}

pub fn gen_data(a: GenDataArgs) -> Result<ExitCode> {
    let s = Settings::load(
        a.config.as_deref(),
        &[
            ("seed", a.seed.map(|v| v.to_string())),
            ("n_train", a.n_train.map(|v| v.to_string())),
            ("n_val", a.n_val.map(|v| v.to_string())),
            ("size", a.size.map(|v| v.to_string())),
            ("classes", a.classes.map(|v| v.to_string())),
        ],
    )?;
    let classes = s.classes.unwrap_or(4);
    let text = s.data_text(classes);
    announce("effective config", &text);
    let ds = Dataset::synthetic(s.train.seed, s.n_train, s.n_val, s.size, classes)?;
    write_dataset(&a.out, &ds)?;
    write(&a.out.join("config.txt"), &text)?;
    println!(
        "wrote {} train and {} val samples to {}",
        ds.train.len(),
        ds.val.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_settings(run: &RunArgs, extra: &[(&'static str, Option<String>)]) -> Result<Settings> {
    let mut overrides = run.overrides();
    overrides.extend_from_slice(extra);
    Settings::load(run.config.as_deref(), &overrides)
}

fn report_text(r: &EvalReport) -> String {
    let mut s = format!("images = {}\nmdsc = {}\n", r.images, r.mdsc);
    for (c, v) in r.per_class.iter().enumerate() {
        let _ = writeln!(s, "dsc_{c} = {v}");
    }
    s
}

fn write_overlays(params: &NetParams<f32>, samples: &[hpdnet::data::SegSample], n: usize, dir: &Path) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    mkdir(dir)?;
    let mut p = params.clone();
    for s in samples.iter().take(n) {
        let (logits, _) = net_forward(&s.image, &mut p, false)?;
        let pred = LabelMap::argmax(&logits)?;
        emit_overlay(&s.image, &pred, &s.labels, dir.join(format!("{}.png", s.id)))?;
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let s = run_settings(
        &a.run,
        &[("num_hpd", a.num_hpd.map(|v| v.to_string())), ("downsamplers", a.downsamplers.clone())],
    )?;
    let ds = read_dataset(&a.run.data)?;
    let net = s.net_config(ds.classes)?;
    let text = s.run_text(&net);
    announce("effective config", &text);
    let out = &a.run.out;
    mkdir(out)?;
    write(&out.join("config.txt"), &text)?;

    let log_path = out.join("metrics.log");
    let mut log = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    let mut log_err = None;
    let start = Instant::now();
    let (params, _) = train_with(&net, &s.train, &ds, |r| {
        println!("{r}");
        if let Err(e) = writeln!(log, "{r}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(io_err(&log_path)(e));
    }
    eprintln!("trained in {:.1}s", start.elapsed().as_secs_f64());
    save_checkpoint(out.join("checkpoint"), &params)?;
    let split = hpdnet::train::eval_split(&ds);
    let report = evaluate(&params, split, s.train.workers)?;
    let summary = report_text(&report);
    write(&out.join("summary.txt"), &summary)?;
    announce("final evaluation", &summary);
    write_overlays(&params, split, a.overlays, &out.join("overlays"))?;
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let params = load_checkpoint(&a.checkpoint)?;
    let ds = read_dataset(&a.data)?;
    let samples = match a.split.as_str() {
        "val" => &ds.val,
        "train" => &ds.train,
        other => return Err(Error::Config(format!("unknown split {other:?}, expected train or val"))),
    };
    if a.overlays > 0 && a.out.is_none() {
        return Err(Error::Config("--overlays needs --out".into()));
    }
    announce(
        "effective config",
        &format!(
            "checkpoint = {}\ndata = {}\nsplit = {}\nworkers = {}\n",
            a.checkpoint.display(),
            a.data.display(),
            a.split,
            a.workers
        ),
    );
    let report = evaluate(&params, samples, a.workers)?;
    let text = report_text(&report);
    print!("{text}");
    if let Some(out) = &a.out {
        mkdir(out)?;
        write(&out.join("eval.txt"), &text)?;
        write_overlays(&params, samples, a.overlays, &out.join("overlays"))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    announce("effective config", &format!("seed = {}\n", a.seed));
    let reports = run_all(a.seed)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        eprintln!("{failed} gradient check(s) over tolerance");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn time_ms(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    let start = Instant::now();
    for _ in 0..reps {
        f();
    }
    start.elapsed().as_secs_f64() * 1e3 / reps as f64
}

pub fn bench(a: BenchArgs) -> Result<ExitCode> {
    if a.reps == 0 {
        return Err(Error::Config("--reps must be >= 1".into()));
    }
    announce(
        "effective config",
        &format!("reps = {}\nseed = {}\nsize = {}\n", a.reps, a.seed, a.size),
    );
    let mut rng = Rng::new(a.seed);
    println!(
        "{:<6} {:<18} {:>10} {:>10} {:>9} {:>12}",
        "kernel", "shape", "fast_ms", "naive_ms", "speedup", "fast_Melem/s"
    );
    let mut mismatch = false;
    for shape in [[8, 16, 64, 64], [8, 32, 32, 32], [8, 64, 16, 16]] {
        let x: Tensor4<f32> = rng_uniform(&mut rng, shape, -1.0, 1.0)?;
        for name in ["min", "max", "avg"] {
            let (fast, slow) = match name {
                "avg" => (
                    time_ms(a.reps, || drop(avg_pool2d(&x, 2))),
                    time_ms(a.reps, || drop(naive::avg_pool2d(&x, 2))),
                ),
                _ => {
                    let kind = if name == "min" { PoolKind::Min } else { PoolKind::Max };
                    let (y, idx) = pool2d(&x, 2, kind, Padding::Strict)?;
                    let (z, zidx) = naive::pool2d(&x, 2, kind)?;
                    mismatch |= y != z || idx.as_slice() != zidx.as_slice();
                    (
                        time_ms(a.reps, || drop(pool2d(&x, 2, kind, Padding::Strict))),
                        time_ms(a.reps, || drop(naive::pool2d(&x, 2, kind))),
                    )
                }
            };
            println!(
                "{:<6} {:<18} {:>10.3} {:>10.3} {:>8.2}x {:>12.1}",
                name,
                format!("{shape:?}"),
                fast,
                slow,
                slow / fast,
                x.len() as f64 / fast / 1e3
            );
        }
    }
    println!();
    let base = NetConfig::default();
    let mut variants = vec![
        ("maxpool".to_string(), base.clone()),
        ("hpd-sum".to_string(), base.clone().with_num_hpd(base.depth)?),
        ("hpd-concat".to_string(), base.clone().with_num_hpd(base.depth)?.with_fusion(Fusion::Concat)),
    ];
    for d in [Downsampler::AvgPool, Downsampler::StridedConv] {
        let mut c = base.clone();
        c.downsamplers = vec![d; base.depth];
        variants.push((d.to_string(), c));
    }
    let input = [1, 1, a.size, a.size];
    let ref_params = count_params(&build_net::<f32>(&base, &Rng::new(0))?) as f64;
    let ref_flops = count_flops(&base, input)? as f64;
    println!(
        "{:<12} {:>10} {:>8} {:>14} {:>8}",
        "variant", "params", "ratio", "flops", "ratio"
    );
    for (name, cfg) in &variants {
        let p = count_params(&build_net::<f32>(cfg, &Rng::new(0))?);
        let f = count_flops(cfg, input)?;
        println!(
            "{:<12} {:>10} {:>8.3} {:>14} {:>8.3}",
            name,
            p,
            p as f64 / ref_params,
            f,
            f as f64 / ref_flops
        );
    }
    if mismatch {
        eprintln!("optimized pooling disagrees with the naive reference");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_sweep(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Config(format!("--num-hpd: bad entry {t:?}")))
        })
        .collect()
}

pub fn ablate(a: AblateArgs) -> Result<ExitCode> {
    let sweep = parse_sweep(&a.num_hpd)?;
    let s = run_settings(&a.run, &[])?;
    let ds = read_dataset(&a.run.data)?;
    let net = s.net_config(ds.classes)?;
    let sweep_text: Vec<String> = sweep.iter().map(|k| k.to_string()).collect();
    let text = format!("{}# sweep num_hpd = {}\n", s.run_text(&net), sweep_text.join(","));
    announce("effective config", &text);
    let out = &a.run.out;
    mkdir(out)?;
    write(&out.join("config.txt"), &text)?;
    let table = run_ablation(&net, &s.train, &ds, &sweep)?;
    write(&out.join("ablation.tsv"), &table.to_tsv())?;
    write(&out.join("ablation.txt"), &table.to_text())?;
    print!("{}", table.to_text());
    Ok(ExitCode::SUCCESS)
}
