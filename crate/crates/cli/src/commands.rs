use std::fs;

use cic_core::data::{load_cifar, normalize, synthetic, verify_cifar, ChannelStats, Dataset, Split};
use cic_core::gradcheck::{check_layer, check_network, GradReport, LayerProbe};
use cic_core::netbuilder::{
    build_network, mlp_chain, param_count, preset, preset_names, LayerSpec, Network, NetworkConfig,
};
use cic_core::seed;
use cic_core::trainer::{
    checkpoint_load, evaluate, EpochRecord, TrainSchedule, Trainer, CHECKPOINT_FILE, HISTORY_FILE,
    HISTORY_HEADER,
};
use cic_core::{Error, Result};

use crate::{
    exit, Command, DataArgs, DataVerifyArgs, EvalArgs, Failure, GradcheckArgs, NetArgs, ParamsArgs,
    PresetsArgs, ShapesArgs, TrainArgs,
};

type Outcome = std::result::Result<(), Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Params(a) => params(a),
        Command::Shapes(a) => shapes(a),
        Command::Presets(a) => presets(a),
        Command::DataVerify(a) => data_verify(a),
    }
}

fn resolve_net(args: &NetArgs) -> Result<NetworkConfig> {
    let base = match (&args.preset, &args.config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            NetworkConfig::parse(&text)?
        }
        (None, None) => return Err(Error::Config("give --preset NAME or --config FILE".into())),
        (Some(_), Some(_)) => unreachable!("clap rejects --preset with --config"),
    };
    base.resolve(1)?;
    let cfg = if args.width_div == 1 {
        base
    } else {
        base.scaled(args.width_div)?
    };
    cfg.resolve(1)?;
    Ok(cfg)
}

fn print_config(cfg: &NetworkConfig) {
    println!("# resolved config");
    print!("{cfg}");
    println!();
}

/// Prints the key/value settings of a run before it starts.
fn print_settings(settings: &[(&str, String)]) {
    println!("# settings");
    for (k, v) in settings {
        println!("{k} = {v}");
    }
    println!();
}

fn data_settings(d: &DataArgs) -> Vec<(&'static str, String)> {
    let source = match (&d.synthetic, &d.data_dir) {
        (Some(n), _) => format!("synthetic {n}"),
        (None, Some(dir)) => dir.display().to_string(),
        (None, None) => "none".into(),
    };
    vec![
        ("dataset", d.dataset.kind().name().to_string()),
        ("data", source),
        ("test_subset", opt(d.test_subset)),
    ]
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "all".into(), |v| v.to_string())
}

/// Train and test splits from disk or from the synthetic generator. The
/// synthetic split shares one draw so both halves follow the same classes.
fn load_data(d: &DataArgs, train_subset: Option<usize>, data_seed: u64) -> Result<(Dataset, Dataset)> {
    let kind = d.dataset.kind();
    match (d.synthetic, &d.data_dir) {
        (Some(n), _) => {
            let n_test = (n / 5).max(1);
            let all = synthetic(n + n_test, kind.class_count(), 32, seed::derive(data_seed, &[10]))?;
            let train = all.select(&(0..n).collect::<Vec<_>>())?;
            let mut test = all.select(&(n..n + n_test).collect::<Vec<_>>())?;
            test.split = Split::Test;
            let train = match train_subset {
                Some(k) => train.head(k)?,
                None => train,
            };
            let test = match d.test_subset {
                Some(k) => test.head(k)?,
                None => test,
            };
            Ok((train, test))
        }
        (None, Some(dir)) => load_cifar(dir, kind, train_subset, d.test_subset),
        (None, None) => Err(Error::Config("give --data-dir DIR or --synthetic N".into())),
    }
}

fn train(a: TrainArgs) -> Outcome {
    let schedule_base = if a.paper_lr {
        TrainSchedule::full()
    } else {
        TrainSchedule::desk()
    };
    let mut schedule = schedule_base;
    if let Some(bs) = a.batch_size {
        schedule.batch_size = bs;
    }
    let epochs = a.epochs.unwrap_or(schedule.total_epochs);
    let resumed = a.resume.as_ref().map(|p| checkpoint_load(p, None)).transpose()?;
    let cfg = match &resumed {
        Some(ck) => ck.config.clone(),
        None => resolve_net(&a.net)?.with_class_count(a.data.dataset.kind().class_count()),
    };
    print_config(&cfg);
    let mut settings = data_settings(&a.data);
    settings.extend([
        ("train_subset", opt(a.train_subset)),
        (
            "augment",
            Into::<cic_core::data::AugmentPolicy>::into(a.augment).to_string(),
        ),
        ("epochs", epochs.to_string()),
        ("seed", resumed.as_ref().map_or(a.seed, |ck| ck.seed).to_string()),
        ("schedule", if a.paper_lr { "paper" } else { "desk" }.into()),
        ("peak_lr", schedule.segments[0].lr_start.to_string()),
        ("batch_size", schedule.batch_size.to_string()),
        ("normalize", (!a.no_normalize).to_string()),
        ("out", a.out.display().to_string()),
        (
            "resume",
            a.resume
                .as_ref()
                .map_or_else(|| "no".into(), |p| p.display().to_string()),
        ),
    ]);
    print_settings(&settings);

    let mut trainer = match &resumed {
        Some(ck) => Trainer::resume(ck, schedule, a.augment.into())?,
        None => Trainer::new(build_network(&cfg, a.seed)?, schedule, a.augment.into(), a.seed)?,
    };
    if epochs > trainer.schedule.total_epochs {
        return Err(Failure::new(
            exit::CONFIG,
            format!(
                "{epochs} epochs requested, the schedule has {}",
                trainer.schedule.total_epochs
            ),
        ));
    }
    let (mut train_ds, mut test_ds) = load_data(&a.data, a.train_subset, trainer.seed)?;
    if train_ds.class_count != cfg.class_count {
        return Err(Failure::new(
            exit::CONFIG,
            format!(
                "network predicts {} classes, {} has {}",
                cfg.class_count,
                a.data.dataset.kind().name(),
                train_ds.class_count
            ),
        ));
    }
    if !a.no_normalize {
        let stats = match trainer.input_stats.clone() {
            Some(s) => s,
            None => ChannelStats::compute(&train_ds.images),
        };
        train_ds = normalize(train_ds, &stats)?;
        test_ds = normalize(test_ds, &stats)?;
        trainer.input_stats = Some(stats);
    }
    println!(
        "train images = {}, test images = {}",
        train_ds.len(),
        test_ds.len()
    );
    println!("{HISTORY_HEADER}");
    for r in &trainer.history {
        println!("{}", r.csv_row());
    }
    trainer.save(&a.out)?;
    while trainer.epoch < epochs {
        let record: EpochRecord = trainer.run_epoch(&train_ds, Some(&test_ds))?;
        trainer.save(&a.out)?;
        println!("{}", record.csv_row());
    }
    println!(
        "wrote {} and {}",
        a.out.join(HISTORY_FILE).display(),
        a.out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let ck = checkpoint_load(&a.checkpoint, None)?;
    print_config(&ck.config);
    let mut settings = data_settings(&a.data);
    settings.push(("checkpoint", a.checkpoint.display().to_string()));
    settings.push(("epoch", ck.epoch.to_string()));
    print_settings(&settings);
    let mut net: Network = build_network(&ck.config, ck.seed)?;
    ck.restore_network(&mut net)?;
    let (_, mut test) = load_data(&a.data, Some(1), a.seed)?;
    if let Some(stats) = ck.input_stats() {
        test = normalize(test, &stats)?;
    }
    let err = evaluate(&net, &test)?;
    println!("test images = {}", test.len());
    println!("test error = {err:.4}");
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    let mut cfg = resolve_net(&a.net)?;
    cfg.input.height = a.size;
    cfg.input.width = a.size;
    cfg.resolve(a.batch)?;
    print_config(&cfg);
    print_settings(&[
        ("tol", a.tol.to_string()),
        ("step", cic_core::gradcheck::STEP.to_string()),
        ("seed", a.seed.to_string()),
        ("batch", a.batch.to_string()),
        ("layers", opt(a.layers)),
    ]);
    let mut report = GradReport::default();
    if let Some(draws) = a.layers {
        for kind in LayerProbe::ALL {
            let r = check_layer(kind, draws, a.tol, seed::derive(a.seed, &[kind as u64]))?;
            for mut g in r.groups {
                g.name = format!("layer:{}/{}", kind.name(), g.name);
                report.push(g);
            }
        }
    }
    let net = build_network(&cfg, a.seed)?;
    let mut shape = cfg.input;
    shape.batch = a.batch;
    report.extend(check_network(&net, shape, a.tol, a.seed)?);
    print!("{report}");
    if report.passed() {
        println!("gradient check passed (max rel err {:.3e})", report.max_rel());
        Ok(())
    } else {
        Err(Failure::new(
            exit::CONFIG,
            format!("gradient check failed (max rel err {:.3e})", report.max_rel()),
        ))
    }
}

fn params(a: ParamsArgs) -> Outcome {
    if let Some(widths) = &a.mlp {
        let pattern = a
            .pattern
            .clone()
            .unwrap_or_else(|| "0".repeat(widths.len().saturating_sub(1)));
        print_settings(&[
            (
                "mlp",
                widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("pattern", pattern.clone()),
            (
                "window_len",
                a.window.map_or_else(|| "none".into(), |l| l.to_string()),
            ),
            ("shared", a.shared.to_string()),
        ]);
        let chain = mlp_chain(widths, &pattern, a.window, a.shared)?;
        println!(
            "{:<8} {:>6} {:>6} {:>8} {:>8}",
            "layer", "in", "out", "weights", "biases"
        );
        let (mut tw, mut tb) = (0, 0);
        for (i, (spec, c_in)) in chain.iter().enumerate() {
            let (w, b) = param_count(spec, *c_in)?;
            println!(
                "{:<8} {:>6} {:>6} {:>8} {:>8}",
                format!("fc{}", i + 1),
                c_in,
                spec.out_channels(*c_in)?,
                w,
                b
            );
            tw += w;
            tb += b;
        }
        println!("total weights = {tw}, biases = {tb}");
        return Ok(());
    }
    let cfg = resolve_net(&a.net)?;
    print_config(&cfg);
    println!(
        "{:<18} {:<12} {:>10} {:>8} {:>8}",
        "layer", "kind", "weights", "biases", "bn"
    );
    let (mut tw, mut tb, mut tn) = (0, 0, 0);
    let layers = cfg.resolve(1)?;
    for (i, layer) in layers.iter().enumerate() {
        let (w, mut b) = layer.param_count();
        match layer.spec {
            LayerSpec::Clc(_) => {
                // a bias feeding batch norm is cancelled by it and never trained
                if matches!(layers.get(i + 1).map(|l| l.spec), Some(LayerSpec::BatchNorm)) {
                    b = 0;
                }
                println!("{:<18} {:<12} {:>10} {:>8} {:>8}", layer.name, "clc", w, b, "");
                tw += w;
                tb += b;
            }
            LayerSpec::BatchNorm => {
                println!(
                    "{:<18} {:<12} {:>10} {:>8} {:>8}",
                    layer.name,
                    "bn",
                    "",
                    "",
                    w + b
                );
                tn += w + b;
            }
            _ => {}
        }
    }
    println!(
        "total weights = {tw}, biases = {tb}, bn = {tn}, parameters = {}",
        tw + tb + tn
    );
    Ok(())
}

fn shapes(a: ShapesArgs) -> Outcome {
    let cfg = resolve_net(&a.net)?;
    print_config(&cfg);
    let layers = cfg.resolve(a.batch)?;
    let fmt = |s: cic_core::Shape4| format!("{}x{}x{}x{}", s.batch, s.channels, s.height, s.width);
    println!("{:<18} {:<12} {:>16} {:>16}", "layer", "kind", "input", "output");
    for layer in &layers {
        println!(
            "{:<18} {:<12} {:>16} {:>16}",
            layer.name,
            layer.spec.kind(),
            fmt(layer.input),
            fmt(layer.output)
        );
    }
    if let Some(last) = layers.last() {
        println!("output = {}", fmt(last.output));
    }
    Ok(())
}

fn presets(a: PresetsArgs) -> Outcome {
    match a.name {
        None => {
            for name in preset_names() {
                println!("{name}");
            }
        }
        Some(name) => print!("{}", preset(&name)?),
    }
    Ok(())
}

fn data_verify(a: DataVerifyArgs) -> Outcome {
    let kind = a.dataset.kind();
    print_settings(&[
        ("dataset", kind.name().to_string()),
        ("data_dir", a.data_dir.display().to_string()),
    ]);
    let report = verify_cifar(&a.data_dir, kind);
    print!("{report}");
    println!(
        "train: {}, test: {}",
        report.train_records(),
        report.test_records()
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::new(
            exit::IO,
            format!("{} files failed verification", kind.name()),
        ))
    }
}
