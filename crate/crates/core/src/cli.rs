//! The `ageres` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 verification failure.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::arch::{Architecture, Network};
use crate::autodiff::{run_suite, Fault, OpKind};
use crate::config::ExperimentConfig;
use crate::dataset::synth::{generate_corpus, SynthConfig};
use crate::dataset::{Dataset, DatasetIndex};
use crate::error::{Error, Result};
use crate::noise::{comparison_table, degradation_sweep, sweep_csv, DbMode};
use crate::trainer::{evaluate, load_checkpoint, metrics_csv, save_checkpoint, train};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const DEFAULT_OUT: &str = "ageres-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

/// Exit code class of an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. } | Error::Image { .. } | Error::Io(_) | Error::Checkpoint(_) | Error::NonFinite { .. } => EXIT_DATA,
        Error::Verification(_) => EXIT_VERIFICATION,
        _ => EXIT_USAGE,
    }
}

#[derive(Parser, Debug)]
#[command(name = "ageres", version, about = "Age regression with ResNet-50/AlexNet and input-noise robustness sweeps")]
pub struct Cli {
    /// TOML experiment config; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// More logging (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Index a directory of labelled images and write the train/test manifest.
    Prepare(PrepareArgs),
    /// Train a network and write its checkpoint and metrics series.
    Train(TrainArgs),
    /// Report MSE and MAE of a checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// Measure MAE degradation under Gaussian input noise.
    NoiseSweep(SweepArgs),
    /// Print an architecture manifest with parameter counts.
    Describe(DescribeArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic labelled corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Resnet50,
    Alexnet,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Resnet50 => Architecture::Resnet50,
            ArchArg::Alexnet => Architecture::Alexnet,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DbModeArg {
    Power,
    Snr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args, Debug, Default)]
pub struct SeedArgs {
    #[arg(long)]
    pub seed_weights: Option<u64>,
    #[arg(long)]
    pub seed_split: Option<u64>,
    #[arg(long)]
    pub seed_shuffle: Option<u64>,
    #[arg(long)]
    pub seed_dropout: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    /// Square input side in pixels.
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Drop every batch-norm layer.
    #[arg(long)]
    pub no_batchnorm: bool,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (manifest, summary and resolved config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed_split: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Image directory; indexed and split on the fly when no manifest is given.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub seeds: SeedArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the architecture manifest and exit without training.
    #[arg(long)]
    pub describe: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Comma-separated levels; `-inf` is the noiseless control.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub levels_db: Option<Vec<f64>>,
    /// Prepend a noiseless control row.
    #[arg(long)]
    pub control: bool,
    #[arg(long)]
    pub reference_std: Option<f64>,
    #[arg(long, value_enum)]
    pub db_mode: Option<DbModeArg>,
    #[arg(long)]
    pub seed_noise: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Randomized shapes per op.
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale the conv2d backward output by this factor (self-test of the checker).
    #[arg(long, hide = true)]
    pub corrupt_conv_backward: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Prepare(a) => cmd_prepare(&mut cfg, a),
        Command::Train(a) => cmd_train(&mut cfg, a),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a),
        Command::NoiseSweep(a) => cmd_noise_sweep(&mut cfg, a),
        Command::Describe(a) => cmd_describe(&mut cfg, a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => {
            let paths = generate_corpus(
                &a.out,
                SynthConfig {
                    count: a.count,
                    size: a.size,
                    seed: a.seed,
                },
            )?;
            println!("wrote {} images to {}", paths.len(), a.out.display());
            Ok(EXIT_OK)
        }
    }
}

fn apply_model_args(cfg: &mut ExperimentConfig, m: &ModelArgs) {
    if let Some(a) = m.arch {
        cfg.train.architecture = a.into();
    }
    if let Some(s) = m.input_size {
        cfg.train.input_size = s;
    }
    if m.no_batchnorm {
        cfg.train.batchnorm = false;
    }
}

fn out_dir(cfg: &mut ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    if let Some(p) = flag {
        cfg.out = Some(p);
    }
    cfg.out.get_or_insert_with(|| PathBuf::from(DEFAULT_OUT)).clone()
}

fn cmd_prepare(cfg: &mut ExperimentConfig, a: PrepareArgs) -> Result<i32> {
    if let Some(d) = a.data {
        cfg.data.data_dir = Some(d);
    }
    if let Some(s) = a.seed_split {
        cfg.train.seeds.split = s;
    }
    let data_dir = cfg
        .data
        .data_dir
        .clone()
        .ok_or_else(|| Error::Config("prepare needs --data".into()))?;
    let out = out_dir(cfg, a.out);
    let index = DatasetIndex::scan(&data_dir, cfg.train.seeds.split)?;
    fs::create_dir_all(&out)?;
    let manifest = out.join(MANIFEST_FILE);
    index.write_manifest(&manifest)?;
    cfg.data.manifest = Some(manifest.clone());
    cfg.write_resolved(&out)?;
    let summary = index.summary();
    fs::write(out.join("summary.txt"), format!("{summary}\n"))?;
    println!("{summary}");
    println!("manifest: {}", manifest.display());
    Ok(EXIT_OK)
}

/// The manifest from flags/config, or a fresh index of the data directory.
fn resolve_index(cfg: &ExperimentConfig, manifest: Option<PathBuf>, data: Option<PathBuf>) -> Result<DatasetIndex> {
    if let Some(m) = manifest.or_else(|| cfg.data.manifest.clone()) {
        return DatasetIndex::read_manifest(&m);
    }
    if let Some(d) = data.or_else(|| cfg.data.data_dir.clone()) {
        return DatasetIndex::scan(&d, cfg.train.seeds.split);
    }
    Err(Error::Config("no data given: pass --manifest or --data".into()))
}

fn cmd_train(cfg: &mut ExperimentConfig, a: TrainArgs) -> Result<i32> {
    apply_model_args(cfg, &a.model);
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.adam.learning_rate = v;
    }
    let seeds = &mut cfg.train.seeds;
    for (flag, slot) in [
        (a.seeds.seed_weights, &mut seeds.weights),
        (a.seeds.seed_split, &mut seeds.split),
        (a.seeds.seed_shuffle, &mut seeds.shuffle),
        (a.seeds.seed_dropout, &mut seeds.dropout),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if a.describe {
        let net = Network::new(cfg.train.network_spec()?)?;
        print!("{}", net.manifest());
        return Ok(EXIT_OK);
    }
    cfg.train.validate()?;
    if let Some(m) = a.manifest {
        cfg.data.manifest = Some(m);
    } else if let Some(d) = a.data {
        cfg.data.manifest = None;
        cfg.data.data_dir = Some(d);
    }
    let index = resolve_index(cfg, None, None)?;
    let out = out_dir(cfg, a.out);
    fs::create_dir_all(&out)?;
    cfg.write_resolved(&out)?;

    let size = cfg.train.input_size;
    let data = Dataset::load(&index, (size, size));
    println!(
        "{}: {} records, {} decoded, train {} / test {}",
        cfg.train.architecture,
        index.records.len(),
        data.loaded(),
        index.train_ids.len(),
        index.test_ids.len()
    );
    let outcome = train(&cfg.train, &index, &data, |m| {
        println!(
            "epoch {:>3}  loss {:.4}  mae {:.4}  val_loss {:.4}  val_mae {:.4}",
            m.epoch, m.loss, m.mae, m.val_loss, m.val_mae
        );
    })?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &outcome.model, &cfg.train)?;
    fs::write(out.join(METRICS_FILE), metrics_csv(&outcome.metrics, &cfg.train.seeds))?;
    let (best, last) = (outcome.best(), outcome.last());
    println!(
        "best epoch {} (val_mae {:.4}); final epoch {} mae {:.4} val_mae {:.4}",
        best.epoch, best.val_mae, last.epoch, last.mae, last.val_mae
    );
    println!("checkpoint: {}", out.join(CHECKPOINT_FILE).display());
    Ok(EXIT_OK)
}

fn split_ids(index: &DatasetIndex, split: SplitArg) -> Vec<usize> {
    match split {
        SplitArg::Train => index.train_ids.clone(),
        SplitArg::Test => index.test_ids.clone(),
        SplitArg::All => (0..index.records.len()).collect(),
    }
}

fn load_split(index: &DatasetIndex, split: SplitArg, size: usize) -> Result<(Dataset, Vec<usize>)> {
    let ids = split_ids(index, split);
    let data = Dataset::load_only(index, &ids, (size, size));
    let ids = data.available(&ids);
    if ids.is_empty() {
        return Err(Error::Config(format!("the {split:?} split has no decodable records")));
    }
    Ok((data, ids))
}

fn cmd_evaluate(cfg: &ExperimentConfig, a: EvaluateArgs) -> Result<i32> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let index = resolve_index(cfg, a.manifest, None)?;
    let (data, ids) = load_split(&index, a.split, ckpt.config.input_size)?;
    let batch = a.batch_size.unwrap_or(ckpt.config.batch_size);
    let ev = evaluate(&ckpt.model, &data, &ids, batch)?;
    println!("samples {}  loss {}  mae {}", ev.samples, ev.loss, ev.mae);
    Ok(EXIT_OK)
}

fn cmd_noise_sweep(cfg: &mut ExperimentConfig, a: SweepArgs) -> Result<i32> {
    if let Some(l) = a.levels_db {
        cfg.noise.levels_db = l;
    }
    if a.control && cfg.noise.levels_db.first() != Some(&f64::NEG_INFINITY) {
        cfg.noise.levels_db.insert(0, f64::NEG_INFINITY);
    }
    if let Some(r) = a.reference_std {
        cfg.noise.reference_std = r;
    }
    if let Some(m) = a.db_mode {
        cfg.noise.db_mode = match m {
            DbModeArg::Power => DbMode::Power,
            DbModeArg::Snr => DbMode::Snr,
        };
    }
    if let Some(s) = a.seed_noise {
        cfg.noise.seed = s;
    }
    if let Some(m) = a.manifest {
        cfg.data.manifest = Some(m);
    }
    let base = cfg.noise.base_spec()?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    cfg.train = ckpt.config.clone();
    let index = resolve_index(cfg, None, None)?;
    if index.test_ids.is_empty() {
        return Err(Error::Config("the test split is empty".into()));
    }
    let out = out_dir(cfg, a.out);
    fs::create_dir_all(&out)?;
    cfg.write_resolved(&out)?;
    let (data, ids) = load_split(&index, SplitArg::Test, ckpt.config.input_size)?;
    let batch = a.batch_size.unwrap_or(ckpt.config.batch_size);
    let points = degradation_sweep(&ckpt.model, &data, &ids, &cfg.noise.levels_db, base, batch)?;
    let csv = sweep_csv(&points);
    fs::write(out.join(SWEEP_FILE), &csv)?;
    print!("{csv}");
    println!();
    print!("{}", comparison_table(&points));
    println!("(published figures come from full-scale training; desk-scale values are not expected to match)");
    Ok(EXIT_OK)
}

fn cmd_describe(cfg: &mut ExperimentConfig, a: DescribeArgs) -> Result<i32> {
    apply_model_args(cfg, &a.model);
    let net = Network::new(cfg.train.network_spec()?)?;
    print!("{}", net.manifest());
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<i32> {
    let fault = a.corrupt_conv_backward.map(|scale| Fault {
        kind: OpKind::Conv2d,
        scale,
    });
    let reports = run_suite(a.cases, a.seed, fault)?;
    println!("{:<16} {:>6} {:>14}  {}", "op", "cases", "max_rel_error", "status");
    for r in &reports {
        println!(
            "{:<16} {:>6} {:>14.3e}  {}",
            r.op,
            r.cases,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed).collect();
    if failed.is_empty() {
        return Ok(EXIT_OK);
    }
    for r in &failed {
        eprintln!("{} failed: max relative error {:.3e} at {}", r.op, r.max_rel_error, r.worst_case);
    }
    Ok(EXIT_VERIFICATION)
}

