//! Acceptance suite: one PASS/FAIL/N/A line per criterion A1-A9.
//!
//! Run with `cargo test -p cic-core --test acceptance -- --nocapture`.
//! `CIC_ACCEPT_ONLY=A3,A5` restricts the run. When `CIC_CIFAR10_DIR` or
//! `CIC_CIFAR100_DIR` point at the official binaries they are used; otherwise
//! A5, A7 and A9 run on generated stand-in data and say so in their line.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cic_core::data::{
    load_cifar, normalize, synthetic, verify_cifar, AugmentPolicy, ChannelStats, CifarKind, Split,
};
use cic_core::gradcheck::{banded_oracle, check_layer, check_network, LayerProbe};
use cic_core::layers::{clc_forward, ClcSpec, ClcWeights};
use cic_core::netbuilder::{build_network, mlp_chain, param_count, preset, LayerSpec};
use cic_core::trainer::{evaluate, history_csv, train, TrainOptions, TrainSchedule, Trainer, HISTORY_FILE};
use cic_core::{Shape4, Tensor4};

/// Criteria expected to fail, with the reason recorded alongside the code.
/// The suite fails if one of these starts passing or any other one fails.
const KNOWN_FAILURES: &[(&str, &str)] = &[(
    "A1",
    "the listed width 143 for a 48-channel window on 192 channels disagrees with C - L + 1 = 145",
)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    NotApplicable,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: impl Into<String>) -> Self {
        Outcome {
            status: if ok { Status::Pass } else { Status::Fail },
            detail: detail.into(),
        }
    }
}

struct Criterion {
    id: &'static str,
    title: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn env_dir(var: &str) -> Option<PathBuf> {
    std::env::var_os(var).map(PathBuf::from).filter(|p| p.is_dir())
}

// A1 ---------------------------------------------------------------------

fn sparse_width(name: &str) -> Option<usize> {
    let cfg = preset(name).ok()?;
    cfg.resolve(1).ok()?.into_iter().find_map(|l| match l.spec {
        LayerSpec::Clc(spec) if !spec.is_dense_for(l.input.channels) => Some(l.output.channels),
        _ => None,
    })
}

fn a1_shape_law() -> Outcome {
    let expected: [(&str, usize); 9] = [
        ("table2-L3", 190),
        ("table2-L6", 187),
        ("table2-L12", 181),
        ("table2-L24", 169),
        ("table2-L48", 143),
        ("table3-N160", 158),
        ("table3-N192", 190),
        ("table3-N224", 222),
        ("table3-N256", 254),
    ];
    let mut mismatches = Vec::new();
    for (name, want) in expected {
        let got = sparse_width(name);
        if got != Some(want) {
            mismatches.push(format!("{name}: got {got:?}, expected {want}"));
        }
    }
    let detail = if mismatches.is_empty() {
        "all 9 sparse widths exact".to_string()
    } else {
        format!("{}/9 exact; {}", 9 - mismatches.len(), mismatches.join("; "))
    };
    Outcome::check(mismatches.is_empty(), detail)
}

// A2 ---------------------------------------------------------------------

fn a2_param_counts() -> Outcome {
    let widths = [8, 6, 4, 2];
    let total = |pattern: &str, window: Option<usize>, shared: bool| -> usize {
        mlp_chain(&widths, pattern, window, shared)
            .unwrap()
            .iter()
            .map(|(spec, c_in)| param_count(spec, *c_in).unwrap().0)
            .sum()
    };
    let got = [
        total("000", None, false),
        total("111", Some(3), true),
        total("111", Some(3), false),
    ];
    Outcome::check(
        got == [80, 9, 36],
        format!("dense/shared/unshared weights = {got:?}, expected [80, 9, 36]"),
    )
}

// A3 ---------------------------------------------------------------------

/// Direct evaluation of the defining sum, independent of both the engine
/// and its banded-matrix oracle.
fn reference_pixel(x: &[f64], spec: &ClcSpec, w: &ClcWeights) -> Vec<f64> {
    let windows = x.len() - spec.window_len + 1;
    let m_count = spec.filters_per_window;
    let mut y = Vec::with_capacity(windows * m_count);
    for j in 0..windows {
        let set = if spec.shared { 0 } else { j };
        for m in 0..m_count {
            let mut acc = w.bias[j * m_count + m];
            for l in 0..spec.window_len {
                acc += w.get(set, m, 0, 0, l) * x[j + l];
            }
            y.push(acc);
        }
    }
    y
}

fn a3_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA3);
    let mut worst = 0.0f64;
    for draw in 0..100u64 {
        let c_in = rng.random_range(1..=32);
        let spec = ClcSpec {
            kernel: (1, 1),
            window_len: rng.random_range(1..=c_in),
            filters_per_window: rng.random_range(1..=4),
            shared: draw % 2 == 0,
            stride: (1, 1),
            pad: (0, 0),
        };
        let mut w = ClcWeights::he_init(&spec, c_in, draw).unwrap();
        for b in &mut w.bias {
            *b = rng.random_range(-1.0..1.0);
        }
        let x: Vec<f64> = (0..c_in).map(|_| rng.random_range(-2.0..2.0)).collect();
        let input = Tensor4::from_vec(Shape4::new(1, c_in, 1, 1).unwrap(), x.clone()).unwrap();
        let engine = clc_forward(&input, &spec, &w).unwrap();
        let banded = banded_oracle(&x, &spec, &w).unwrap();
        let direct = reference_pixel(&x, &spec, &w);
        if engine.data().len() != direct.len() || banded.len() != direct.len() {
            return Outcome::check(false, format!("draw {draw}: output length mismatch"));
        }
        for ((e, b), d) in engine.data().iter().zip(&banded).zip(&direct) {
            worst = worst.max((e - b).abs()).max((e - d).abs());
        }
    }
    Outcome::check(
        worst <= 1e-12,
        format!("100 draws, max |engine - oracle| = {worst:.2e} (limit 1e-12)"),
    )
}

// A4 ---------------------------------------------------------------------

fn a4_gradient_suite() -> Outcome {
    let tol = 1e-4;
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, kind) in LayerProbe::ALL.into_iter().enumerate() {
        let report = check_layer(kind, 50, tol, 0xA4 + i as u64).unwrap();
        ok &= report.passed();
        lines.push(format!("{} {:.1e}", kind.name(), report.max_rel()));
    }
    let mut cfg = preset("table2-L3").unwrap().scaled(16).unwrap();
    cfg.input = Shape4::new(1, 3, 8, 8).unwrap();
    let net = build_network(&cfg, 0xA4).unwrap();
    let report = check_network(&net, Shape4::new(2, 3, 8, 8).unwrap(), tol, 0xA4).unwrap();
    ok &= report.passed();
    lines.push(format!("table2-L3/16 network {:.1e}", report.max_rel()));
    if !report.passed() {
        print!("{report}");
    }
    Outcome::check(
        ok,
        format!("max rel err per check (tol 1e-4): {}", lines.join(", ")),
    )
}

// A5 ---------------------------------------------------------------------

fn a5_overfit() -> Outcome {
    let start = Instant::now();
    let (train_set, source) = match env_dir("CIC_CIFAR10_DIR") {
        Some(dir) => (
            load_cifar(&dir, CifarKind::Cifar10, Some(64), Some(1)).unwrap().0,
            "CIFAR-10",
        ),
        None => (
            synthetic(64, 10, 32, 0xA5).unwrap(),
            "synthetic stand-in for CIFAR-10",
        ),
    };
    let stats = ChannelStats::compute(&train_set.images);
    let ds = normalize(train_set, &stats).unwrap();
    let cfg = preset("cic3d-default").unwrap().scaled(4).unwrap();
    let net = build_network(&cfg, 0xA5).unwrap();
    let schedule = TrainSchedule::desk();
    let lr = schedule.lr_at_epoch(1).unwrap();
    let mut trainer = Trainer::new(net, schedule, AugmentPolicy::None, 0xA5).unwrap();
    let (mut best, mut reached) = (0.0f64, None);
    for it in 1..=500 {
        trainer.train_step(&ds.images, &ds.labels, lr).unwrap();
        if it % 5 == 0 {
            let acc = 1.0 - evaluate(&trainer.net, &ds).unwrap();
            best = best.max(acc);
            if acc >= 0.95 {
                reached = Some(it);
                break;
            }
        }
        if start.elapsed() > Duration::from_secs(600) {
            break;
        }
    }
    let detail = match reached {
        Some(it) => format!(
            "{source}: {:.1}% train accuracy (eval mode) after {it} iterations",
            best * 100.0
        ),
        None => format!(
            "{source}: best {:.1}% train accuracy, 95% not reached",
            best * 100.0
        ),
    };
    Outcome::check(reached.is_some(), detail)
}

// A6 ---------------------------------------------------------------------

fn a6_schedule() -> Outcome {
    let s = TrainSchedule::full();
    let lr: Vec<f64> = (1..=230).map(|e| s.lr_at_epoch(e).unwrap()).collect();
    let plateau = lr[..80].iter().all(|&v| v == 0.5);
    let anchor = lr[179] == 0.005;
    let monotone = lr.windows(2).all(|w| w[1] <= w[0]);
    Outcome::check(
        plateau && anchor && monotone,
        format!(
            "0.5 on epochs 1-80: {plateau}; epoch 180 = {}; non-increasing over 1-230: {monotone}",
            lr[179]
        ),
    )
}

// A7 ---------------------------------------------------------------------

fn a7_determinism() -> Outcome {
    let (train_set, test_set, source) = match env_dir("CIC_CIFAR10_DIR") {
        Some(dir) => {
            let (tr, te) = load_cifar(&dir, CifarKind::Cifar10, Some(1000), Some(200)).unwrap();
            (tr, te, "CIFAR-10")
        }
        None => {
            let all = synthetic(1200, 10, 32, 0xA7).unwrap();
            let mut te = all.select(&(1000..1200).collect::<Vec<_>>()).unwrap();
            te.split = Split::Test;
            (all.head(1000).unwrap(), te, "synthetic stand-in")
        }
    };
    let stats = ChannelStats::compute(&train_set.images);
    let train_set = normalize(train_set, &stats).unwrap();
    let test_set = normalize(test_set, &stats).unwrap();
    let cfg = preset("cic3d-default").unwrap().scaled(16).unwrap();
    let run = |dir: &Path| -> String {
        let opts = TrainOptions {
            schedule: TrainSchedule::desk(),
            epochs: 2,
            augment: AugmentPolicy::PadCropFlip,
            seed: 0xA7,
            out_dir: Some(dir.to_path_buf()),
        };
        let net = build_network(&cfg, opts.seed).unwrap();
        let (_, history) = train(net, &train_set, Some(&test_set), &opts).unwrap();
        let on_disk = fs::read_to_string(dir.join(HISTORY_FILE)).unwrap();
        assert_eq!(on_disk, history_csv(&history));
        on_disk
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, second) = (run(a.path()), run(b.path()));
    let rows = first.lines().count() - 1;
    Outcome::check(
        first == second && rows == 2,
        format!(
            "{source}, 1000 images, cic3d-default widths/16, padcrop: {rows} rows, identical bytes: {}",
            first == second
        ),
    )
}

// A9 ---------------------------------------------------------------------

/// Writes `records` records of the official layout with valid labels.
fn write_records(path: &Path, kind: CifarKind, records: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BufWriter::new(File::create(path).unwrap());
    let mut record = vec![0u8; kind.record_len()];
    for i in 0..records {
        match kind {
            CifarKind::Cifar10 => record[0] = (i % 10) as u8,
            CifarKind::Cifar100 => {
                record[0] = (i % 20) as u8;
                record[1] = (i % 100) as u8;
            }
        }
        rng.fill(&mut record[kind.label_bytes()..]);
        out.write_all(&record).unwrap();
    }
    out.flush().unwrap();
}

fn official_layout(kind: CifarKind, dir: &Path) {
    let files = kind.train_files();
    for (k, name) in files.iter().enumerate() {
        write_records(&dir.join(name), kind, 50_000 / files.len(), k as u64);
    }
    write_records(&dir.join(kind.test_file()), kind, 10_000, 99);
}

fn copy_layout(kind: CifarKind, from: &Path, to: &Path) {
    let from = kind.resolve_dir(from);
    for name in kind.train_files().iter().chain([&kind.test_file()]) {
        fs::copy(from.join(name), to.join(name)).unwrap();
    }
}

fn a9_one(kind: CifarKind, real: Option<PathBuf>) -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let source = match &real {
        Some(src) => {
            copy_layout(kind, src, dir.path());
            "official files"
        }
        None => {
            official_layout(kind, dir.path());
            "generated files"
        }
    };
    let intact = verify_cifar(dir.path(), kind);
    let counts_ok = intact.passed() && intact.train_records() == 50_000 && intact.test_records() == 10_000;

    let victim = dir.path().join(kind.train_files()[0]);
    let len = fs::metadata(&victim).unwrap().len();
    File::options()
        .write(true)
        .open(&victim)
        .unwrap()
        .set_len(len - 1)
        .unwrap();
    let truncated = verify_cifar(dir.path(), kind);
    let rejected = !truncated.passed() && truncated.train[0].problem.is_some();
    (
        counts_ok && rejected,
        format!(
            "{} ({source}): train {}, test {}, truncated file rejected: {rejected}",
            kind.name(),
            intact.train_records(),
            intact.test_records()
        ),
    )
}

fn a9_data_integrity() -> Outcome {
    let (ok10, d10) = a9_one(CifarKind::Cifar10, env_dir("CIC_CIFAR10_DIR"));
    let (ok100, d100) = a9_one(CifarKind::Cifar100, env_dir("CIC_CIFAR100_DIR"));
    Outcome::check(ok10 && ok100, format!("{d10}; {d100}"))
}

// A8 ---------------------------------------------------------------------

fn a8_full_scale() -> Outcome {
    Outcome {
        status: Status::NotApplicable,
        detail: "full 230-epoch, full-width error rates are out of scope at desk scale; \
                 see the long-run command in README.md"
            .into(),
    }
}

// ------------------------------------------------------------------------

fn criteria() -> Vec<Criterion> {
    let secs = |s| Some(Duration::from_secs(s));
    vec![
        Criterion {
            id: "A1",
            title: "sparse-layer widths of the window and width presets",
            budget: secs(1),
            run: a1_shape_law,
        },
        Criterion {
            id: "A2",
            title: "weight counts of the 8-6-4-2 chain",
            budget: secs(1),
            run: a2_param_counts,
        },
        Criterion {
            id: "A3",
            title: "channel-local layer equals the banded oracle",
            budget: secs(10),
            run: a3_oracle_equivalence,
        },
        Criterion {
            id: "A4",
            title: "finite-difference gradient suite",
            budget: secs(300),
            run: a4_gradient_suite,
        },
        Criterion {
            id: "A5",
            title: "overfit 64 images with cic3d-default/4",
            budget: secs(600),
            run: a5_overfit,
        },
        Criterion {
            id: "A6",
            title: "learning-rate schedule anchors",
            budget: None,
            run: a6_schedule,
        },
        Criterion {
            id: "A7",
            title: "seeded runs give identical histories",
            budget: None,
            run: a7_determinism,
        },
        Criterion {
            id: "A8",
            title: "full-scale error rates",
            budget: None,
            run: a8_full_scale,
        },
        Criterion {
            id: "A9",
            title: "CIFAR binary verification",
            budget: None,
            run: a9_data_integrity,
        },
    ]
}

#[test]
fn acceptance() {
    let only: Option<Vec<String>> = std::env::var("CIC_ACCEPT_ONLY")
        .ok()
        .map(|s| s.split(',').map(|p| p.trim().to_uppercase()).collect());
    let mut unexpected = Vec::new();
    for c in criteria() {
        if only.as_ref().is_some_and(|o| !o.iter().any(|id| id == c.id)) {
            continue;
        }
        let start = Instant::now();
        let mut outcome = (c.run)();
        let elapsed = start.elapsed();
        if let Some(budget) = c.budget {
            if elapsed > budget && outcome.status == Status::Pass {
                outcome.status = Status::Fail;
                outcome.detail = format!("{}; over the {:?} budget", outcome.detail, budget);
            }
        }
        let label = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotApplicable => "N/A ",
        };
        println!(
            "{} {label} {} [{:.2}s] {}",
            c.id,
            c.title,
            elapsed.as_secs_f64(),
            outcome.detail
        );
        let known = KNOWN_FAILURES.iter().find(|(id, _)| *id == c.id);
        match (outcome.status, known) {
            (Status::Fail, Some((_, why))) => println!("   known failure: {why}"),
            (Status::Fail, None) => unexpected.push(format!("{} failed", c.id)),
            (Status::Pass, Some(_)) => {
                unexpected.push(format!("{} passes but is listed as a known failure", c.id))
            }
            _ => {}
        }
    }
    assert!(unexpected.is_empty(), "{}", unexpected.join("; "));
}
