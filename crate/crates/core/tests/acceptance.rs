//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs without the libtest harness so every line reaches the terminal and the
//! expensive desk-scale training is shared between the criteria that need it.

mod common;

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ageres::arch::*;
use ageres::autodiff::gradcheck::{run_suite, SUITE_THRESHOLD};
use ageres::autodiff::Graph;
use ageres::dataset::synth::{generate_corpus, synth_filename, SynthConfig};
use ageres::dataset::{batches, Dataset, DatasetIndex, REFERENCE_CORPUS, REFERENCE_TRAIN};
use ageres::noise::*;
use ageres::ops::Mode;
use ageres::rng::RngStream;
use ageres::trainer::{evaluate, jensen_checks, train, TrainConfig, TrainOutcome};
use ageres::Tensor;

const FROZEN_RESNET50_TRAINABLE: usize = 23_536_641;
const DESK_IMAGES: usize = 500;
const DESK_BUDGET: Duration = Duration::from_secs(60 * 60);
const NOISE_SEEDS: [u64; 5] = [101, 102, 103, 104, 105];
/// Minimum relative drop of ResNet-50 training MAE from epoch 1 to the best epoch.
const MIN_TRAIN_MAE_DROP: f64 = 0.20;

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn line(&mut self, id: &str, title: &str, pass: bool, detail: impl Display) {
        let status = if pass { "PASS" } else { "FAIL" };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "[{status}] {id:<3} {title}: {detail}");
        let _ = out.flush();
        if !pass {
            self.failed.push(id.to_string());
        }
    }
}

fn note(text: impl Display) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "      {text}");
    let _ = out.flush();
}

fn criterion_1(r: &mut Report) {
    let start = Instant::now();
    let result = run_suite(20, 2024, None);
    let elapsed = start.elapsed();
    match result {
        Ok(reports) => {
            let worst = reports.iter().map(|o| o.max_rel_error).fold(0.0, f64::max);
            let all = reports.iter().all(|o| o.passed && o.cases >= 20 && o.max_rel_error < SUITE_THRESHOLD);
            for o in &reports {
                note(format!("{:<16} cases {:>3}  max rel err {:.3e}", o.op, o.cases, o.max_rel_error));
            }
            r.line(
                "1",
                "gradient check, 9 ops x 20 shapes, f64",
                all && reports.len() == 9 && elapsed < Duration::from_secs(300),
                format!("worst {worst:.3e} < {SUITE_THRESHOLD:e}, {:.1}s", elapsed.as_secs_f64()),
            );
        }
        Err(e) => r.line("1", "gradient check", false, e),
    }
}

fn criterion_2(r: &mut Report) {
    let errs = [
        ("conv2d", common::conv_oracle_error(200, 1)),
        ("maxpool2d", common::maxpool_oracle_error(200, 2)),
        ("dense", common::dense_oracle_error(200, 3)),
        ("global_avg_pool", common::gap_oracle_error(200, 4)),
    ];
    let pass = errs.iter().all(|(_, e)| *e < 1e-5);
    let detail: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    r.line("2", "kernels vs nested-loop oracles, 200 cases each", pass, detail.join(", "));
}

fn identity_passthrough() -> bool {
    let spec = BlockSpec::identity((8, 8, 16), 3);
    let (mut params, mut stats) = init_block::<f64>("b", 16, &spec, true, 5).unwrap();
    for n in ["b.bn_c.gamma", "b.bn_c.beta"] {
        params.get_mut(n).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = Tensor::from_fn(&[2, 16, 6, 6], |i| ((i * 29) % 31) as f64 / 10.0);
    let mut g = Graph::new(&params, Mode::Train);
    let xi = g.input("x", x.clone());
    let y = build_identity_block(&mut g, &mut stats, "b", xi, &spec, true).unwrap();
    g.value(y) == &x
}

fn criterion_3(r: &mut Report) {
    let spec = NetworkSpec::resnet50((3, 64, 64), 1, NetworkOptions::default()).unwrap();
    let conv = spec.count_blocks(BlockKind::Convolutional);
    let ident = spec.count_blocks(BlockKind::Identity);
    let pools: Vec<String> = spec.stages_with_maxpool().into_iter().map(String::from).collect();
    let stages = spec.stages.len();
    let net = Network::new(spec).unwrap();
    let (oracle, _) = common::resnet50_count(3, 1, true, RESNET50_IDENTITY_BLOCKS);
    let count = net.trainable_parameters();
    let passthrough = identity_passthrough();
    let pass = conv == 4 && ident == 12 && stages == 5 && pools == ["stage1"] && passthrough && count == oracle && count == FROZEN_RESNET50_TRAINABLE;
    r.line(
        "3",
        "ResNet-50 architecture fidelity",
        pass,
        format!(
            "{conv} conv + {ident} identity blocks, {stages} stages, maxpool in {pools:?}, passthrough {passthrough}, params {count} (oracle {oracle})"
        ),
    );
}

fn criterion_4(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..REFERENCE_CORPUS {
        fs::write(dir.path().join(synth_filename((i % 117) as u32, (i % 2) as u8, (i % 5) as u8, i)), b"").unwrap();
    }
    let a = DatasetIndex::scan(dir.path(), 77).unwrap();
    let b = DatasetIndex::scan(dir.path(), 77).unwrap();
    let c = DatasetIndex::scan(dir.path(), 78).unwrap();
    let counts = (a.train_ids.len(), a.test_ids.len());
    let pass = counts == (REFERENCE_TRAIN, REFERENCE_CORPUS - REFERENCE_TRAIN)
        && a.train_ids == b.train_ids
        && a.test_ids == b.test_ids
        && a.train_ids != c.train_ids
        && ageres::dataset::disjoint(&a.train_ids, &a.test_ids);
    r.line("4", "split exactness", pass, format!("{} records -> {}/{}, seeded", a.records.len(), counts.0, counts.1));
}

fn criterion_5(r: &mut Report) {
    let img = Tensor::full(&[1_000_000], 0.5f32);
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (i, &level) in DEFAULT_LEVELS_DB.iter().enumerate() {
        let spec = NoiseSpec::new(level, DEFAULT_REFERENCE_STD, 55).unwrap();
        let noisy = add_awgn(&img, &spec, RngStream::new(55, i as u64)).unwrap();
        let measured = measure_noise_level(&img, &noisy, DEFAULT_REFERENCE_STD).unwrap();
        worst = worst.max((measured - level).abs());
        detail.push(format!("{level}->{measured:.3}"));
    }
    r.line("5", "noise calibration, 1e6 samples", worst < 0.1, format!("max |error| {worst:.4} dB ({})", detail.join(" ")));
}

fn run_cli(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_ageres"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn criterion_8(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    generate_corpus(&root.join("data"), SynthConfig { count: 24, size: 32, seed: 9 }).unwrap();
    let mut ok = run_cli(&["prepare", "--data", "data", "--out", "prep"], root);
    for run in ["a", "b"] {
        ok &= run_cli(
            &["train", "--manifest", "prep/manifest.tsv", "--input-size", "32", "--epochs", "2", "--batch-size", "8", "--out", run],
            root,
        );
        ok &= run_cli(
            &["noise-sweep", "--checkpoint", &format!("{run}/checkpoint.bin"), "--manifest", "prep/manifest.tsv", "--control", "--out", &format!("{run}/sweep")],
            root,
        );
    }
    let same = |f: &str| ok && fs::read(root.join("a").join(f)).ok().is_some_and(|a| Some(a) == fs::read(root.join("b").join(f)).ok());
    let files = ["metrics.csv", "checkpoint.bin", "sweep/sweep.csv"];
    let identical: Vec<bool> = files.iter().map(|f| same(f)).collect();
    r.line(
        "8",
        "train + noise-sweep rerun is byte-identical",
        ok && identical.iter().all(|&b| b),
        format!("{files:?} identical: {identical:?}"),
    );
}

struct Desk {
    _dir: tempfile::TempDir,
    data: Dataset,
    resnet: TrainOutcome,
    alexnet: TrainOutcome,
    elapsed: Duration,
}

fn desk_training() -> Result<Desk, String> {
    let dir = tempfile::tempdir().unwrap();
    generate_corpus(dir.path(), SynthConfig { count: DESK_IMAGES, size: 64, seed: 0 }).map_err(|e| e.to_string())?;
    let base = TrainConfig::default();
    let index = DatasetIndex::scan(dir.path(), base.seeds.split).map_err(|e| e.to_string())?;
    let data = Dataset::load(&index, (base.input_size, base.input_size));
    let start = Instant::now();
    let mut runs = Vec::new();
    for arch in [Architecture::Resnet50, Architecture::Alexnet] {
        let cfg = TrainConfig { architecture: arch, ..base.clone() };
        let t = Instant::now();
        let out = train(&cfg, &index, &data, |m| {
            if m.epoch % 5 == 0 {
                note(format!("{arch} epoch {:>2}: mae {:.3} val_mae {:.3}", m.epoch, m.mae, m.val_mae));
            }
        })
        .map_err(|e| format!("{arch}: {e}"))?;
        note(format!("{arch} trained in {:.0}s", t.elapsed().as_secs_f64()));
        runs.push(out);
    }
    let alexnet = runs.pop().unwrap();
    let resnet = runs.pop().unwrap();
    Ok(Desk {
        _dir: dir,
        data,
        resnet,
        alexnet,
        elapsed: start.elapsed(),
    })
}

/// Diagnostic only: training-set MAE of the final ResNet-50 weights when
/// normalizing by batch statistics, and after re-estimating the running
/// statistics with the weights frozen.
fn resnet_statistics_probe(d: &Desk) -> ageres::Result<(f64, f64)> {
    let model = &d.resnet.model;
    let ids = &d.resnet.train_ids;
    let (mut abs, mut n) = (0.0, 0usize);
    let mut scratch = model.stats.clone();
    for b in batches(ids, 32, 0, 0) {
        let (x, y) = d.data.batch(&b)?;
        let p = model.network.predict(&model.params, &mut scratch, x, Mode::Train, RngStream::new(0, 0))?;
        abs += p.data().iter().zip(y.data()).map(|(a, t)| (a - t).abs() as f64).sum::<f64>();
        n += b.len();
    }
    let mut recal = model.clone();
    for epoch in 0..15 {
        for b in batches(ids, 32, 0, epoch) {
            let (x, _) = d.data.batch(&b)?;
            recal.network.predict(&recal.params, &mut recal.stats, x, Mode::Train, RngStream::new(0, 0))?;
        }
    }
    Ok((abs / n as f64, evaluate(&recal, &d.data, ids, 32)?.mae))
}

fn criterion_6(r: &mut Report, desk: &Result<Desk, String>) {
    let d = match desk {
        Ok(d) => d,
        Err(e) => return r.line("6", "desk-scale ResNet-50 vs AlexNet", false, e),
    };
    let (res, alex) = (d.resnet.last(), d.alexnet.last());
    let pass = res.mae < alex.mae && d.elapsed < DESK_BUDGET;
    r.line(
        "6",
        "desk-scale final training MAE, ResNet-50 < AlexNet",
        pass,
        format!(
            "{:.3} vs {:.3} (val {:.3} vs {:.3}), {:.1} min",
            res.mae,
            alex.mae,
            res.val_mae,
            alex.val_mae,
            d.elapsed.as_secs_f64() / 60.0
        ),
    );
    match resnet_statistics_probe(d) {
        Ok((batch_stats, recalibrated)) => note(format!(
            "ResNet-50 final weights, training set: batch-statistics mae {batch_stats:.3}, mae with recalibrated running statistics {recalibrated:.3}"
        )),
        Err(e) => note(format!("running-statistics probe failed: {e}")),
    }
    let first = d.resnet.metrics[0].mae;
    let best = d.resnet.best();
    let drop = (first - best.mae) / first;
    r.line(
        "6b",
        "ResNet-50 training MAE drop from epoch 1 to best epoch",
        drop >= MIN_TRAIN_MAE_DROP,
        format!("{first:.3} -> {:.3} at epoch {} ({:.1}%)", best.mae, best.epoch, drop * 100.0),
    );
}

fn criterion_7(r: &mut Report, desk: &Result<Desk, String>) {
    let d = match desk {
        Ok(d) => d,
        Err(e) => return r.line("7", "degradation curve shape", false, e),
    };
    let levels = DEFAULT_LEVELS_DB;
    let mut mean_deg = vec![0.0; levels.len()];
    let mut rhos = Vec::new();
    for &seed in &NOISE_SEEDS {
        let base = NoiseSpec::new(0.0, DEFAULT_REFERENCE_STD, seed).unwrap();
        let points = match degradation_sweep(&d.resnet.model, &d.data, &d.resnet.test_ids, &levels, base, 32) {
            Ok(p) => p,
            Err(e) => return r.line("7", "degradation curve shape", false, e),
        };
        let deg: Vec<f64> = points.iter().map(|p| p.degradation_pct).collect();
        rhos.push(spearman(&levels, &deg));
        for (m, v) in mean_deg.iter_mut().zip(&deg) {
            *m += v / NOISE_SEEDS.len() as f64;
        }
    }
    let rho = rhos.iter().sum::<f64>() / rhos.len() as f64;
    let clean = d.resnet.best();
    let averaged: Vec<DegradationPoint> = levels
        .iter()
        .zip(&mean_deg)
        .map(|(&l, &m)| DegradationPoint {
            level_db: l,
            clean_mae: clean.val_mae,
            noisy_mae: f64::NAN,
            degradation_pct: m,
        })
        .collect();
    for line in comparison_table(&averaged).lines() {
        note(line);
    }
    let pass = mean_deg.iter().all(|&v| v >= 0.0) && rho > 0.0;
    let shown: Vec<String> = mean_deg.iter().map(|v| format!("{v:.3}")).collect();
    r.line(
        "7",
        "degradation >= 0 at every level and rising with dB (5 seeds)",
        pass,
        format!("mean degradation % [{}], mean Spearman {rho:.3}", shown.join(", ")),
    );
}

fn criterion_9(r: &mut Report) {
    let (checked, violated) = jensen_checks();
    r.line(
        "9",
        "mae <= sqrt(mse) on every evaluation batch",
        checked > 0 && violated == 0,
        format!("{checked} batches checked, {violated} violations"),
    );
}

fn main() {
    // `cargo test -- --list` and filters from other targets: nothing to enumerate here
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut r = Report { failed: Vec::new() };
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_4(&mut r);
    criterion_5(&mut r);
    criterion_8(&mut r);
    let desk = desk_training();
    criterion_6(&mut r, &desk);
    criterion_7(&mut r, &desk);
    criterion_9(&mut r);
    if r.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: FAILED {:?}", r.failed);
        std::process::exit(1);
    }
}
