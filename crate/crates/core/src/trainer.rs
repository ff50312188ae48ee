//! Training and evaluation loop, metrics series and checkpoints.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, Network, NetworkOptions, NetworkSpec, RESNET50_IDENTITY_BLOCKS};
use crate::autodiff::{Graph, ParamStore, StatsStore};
use crate::dataset::{batches, Dataset, DatasetIndex};
use crate::error::{Error, Result};
use crate::ops::{Mode, RunningStats};
use crate::optim::{mse_loss, AdamConfig, AdamState};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const METRICS_CSV_HEADER: &str = "epoch,loss,mae,val_loss,val_mae";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub weights: u64,
    pub split: u64,
    pub shuffle: u64,
    pub dropout: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            weights: 1,
            split: 2,
            shuffle: 3,
            dropout: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seeds: Seeds,
    /// Square input side in pixels.
    pub input_size: usize,
    pub batchnorm: bool,
    pub identity_blocks: [usize; 4],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Resnet50,
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::default(),
            seeds: Seeds::default(),
            input_size: 64,
            batchnorm: true,
            identity_blocks: RESNET50_IDENTITY_BLOCKS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.input_size == 0 {
            return Err(Error::Config("input_size must be positive".into()));
        }
        self.adam.validate()
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let options = NetworkOptions {
            batchnorm: self.batchnorm,
            identity_blocks: self.identity_blocks,
            ..NetworkOptions::default()
        };
        NetworkSpec::build(self.architecture, (3, self.input_size, self.input_size), 1, options)
    }
}

/// One row of the metrics series. `loss`/`mae` are on the training split,
/// `val_loss`/`val_mae` on the test split, both evaluated in inference mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub mae: f64,
    pub val_loss: f64,
    pub val_mae: f64,
}

/// A network with its parameters and batch-norm statistics.
#[derive(Clone, Debug)]
pub struct Model {
    pub network: Network,
    pub params: ParamStore<f32>,
    pub stats: StatsStore<f32>,
}

impl Model {
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let network = Network::new(spec)?;
        let (params, stats) = network.init_weights(seed)?;
        Ok(Self { network, params, stats })
    }

    /// Inference-mode predictions for an `N x C x H x W` batch.
    pub fn predict(&self, images: Tensor<f32>) -> Result<Tensor<f32>> {
        let mut stats = self.stats.clone();
        self.network
            .predict(&self.params, &mut stats, images, Mode::Infer, RngStream::new(0, 0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub mae: f64,
    pub samples: usize,
    pub batches: usize,
}

static JENSEN_CHECKS: AtomicU64 = AtomicU64::new(0);
static JENSEN_VIOLATIONS: AtomicU64 = AtomicU64::new(0);

/// `(checked, violated)` counts of the per-batch `mae <= sqrt(mse)` bound in
/// this process.
pub fn jensen_checks() -> (u64, u64) {
    (JENSEN_CHECKS.load(Ordering::Relaxed), JENSEN_VIOLATIONS.load(Ordering::Relaxed))
}

fn check_jensen(mae: f64, mse: f64) -> Result<()> {
    JENSEN_CHECKS.fetch_add(1, Ordering::Relaxed);
    if mae > mse.sqrt() * (1.0 + 1e-12) {
        JENSEN_VIOLATIONS.fetch_add(1, Ordering::Relaxed);
        return Err(Error::Verification(format!("batch mae {mae} exceeds sqrt(mse) {}", mse.sqrt())));
    }
    Ok(())
}

/// Inference over `ids` in the given order. `transform` may replace each
/// sample's image (by record id) before batching.
pub fn evaluate_with<F>(model: &Model, data: &Dataset, ids: &[usize], batch_size: usize, mut transform: F) -> Result<Evaluation>
where
    F: FnMut(usize, &Tensor<f32>) -> Result<Tensor<f32>>,
{
    if ids.is_empty() {
        return Err(Error::Config("evaluation needs at least one sample".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut stats = model.stats.clone();
    let (mut sq, mut abs) = (0.0f64, 0.0f64);
    let mut n_batches = 0;
    for chunk in ids.chunks(batch_size) {
        let (images, ages) = data.batch(chunk)?;
        let per_sample = images.len() / chunk.len();
        let mut pixels = Vec::with_capacity(images.len());
        for (k, &id) in chunk.iter().enumerate() {
            let shape = &images.shape()[1..];
            let img = Tensor::new(shape.to_vec(), images.data()[k * per_sample..(k + 1) * per_sample].to_vec())?;
            pixels.extend_from_slice(transform(id, &img)?.data());
        }
        let images = Tensor::new(images.shape().to_vec(), pixels)?;
        let pred = model
            .network
            .predict(&model.params, &mut stats, images, Mode::Infer, RngStream::new(0, 0))?;
        let (mut bsq, mut babs) = (0.0f64, 0.0f64);
        for (&p, &t) in pred.data().iter().zip(ages.data()) {
            let d = p as f64 - t as f64;
            bsq += d * d;
            babs += d.abs();
        }
        let m = chunk.len() as f64;
        check_jensen(babs / m, bsq / m)?;
        sq += bsq;
        abs += babs;
        n_batches += 1;
    }
    let n = ids.len() as f64;
    Ok(Evaluation {
        loss: sq / n,
        mae: abs / n,
        samples: ids.len(),
        batches: n_batches,
    })
}

/// MSE and MAE of the model over `ids`.
pub fn evaluate(model: &Model, data: &Dataset, ids: &[usize], batch_size: usize) -> Result<Evaluation> {
    evaluate_with(model, data, ids, batch_size, |_, img| Ok(img.clone()))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl TrainOutcome {
    /// Epoch with the lowest `val_mae` (first on ties).
    pub fn best(&self) -> &EpochMetrics {
        self.metrics
            .iter()
            .reduce(|a, b| if b.val_mae < a.val_mae { b } else { a })
            .expect("at least one epoch")
    }

    pub fn last(&self) -> &EpochMetrics {
        self.metrics.last().expect("at least one epoch")
    }
}

/// Trains from scratch on the index's split. `on_epoch` sees each epoch's metrics as they land.
pub fn train(
    config: &TrainConfig,
    index: &DatasetIndex,
    data: &Dataset,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_ids = data.available(&index.train_ids);
    let test_ids = data.available(&index.test_ids);
    if train_ids.is_empty() || test_ids.is_empty() {
        return Err(Error::Config(format!(
            "train and test splits must be non-empty (train {}, test {})",
            train_ids.len(),
            test_ids.len()
        )));
    }
    let test_set: BTreeSet<usize> = test_ids.iter().copied().collect();
    let mut model = Model::init(config.network_spec()?, config.seeds.weights)?;
    let mut adam = AdamState::new(config.adam, &model.params)?;
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let epoch_batches = batches(&train_ids, config.batch_size, config.seeds.shuffle, epoch as u64);
        for (b, ids) in epoch_batches.iter().enumerate() {
            if let Some(leak) = ids.iter().find(|id| test_set.contains(id)) {
                return Err(Error::Contract(format!("test record {leak} scheduled for training")));
            }
            let (images, ages) = data.batch(ids)?;
            let dropout = RngStream::new(config.seeds.dropout, epoch as u64).child(b as u64);
            let grads = {
                let mut g = Graph::new(&model.params, Mode::Train);
                let x = g.input("images", images);
                let y = model.network.forward(&mut g, &mut model.stats, x, dropout)?;
                let loss = mse_loss(g.value(y), &ages)?;
                if !loss.value.is_finite() {
                    return Err(Error::NonFinite {
                        epoch: epoch + 1,
                        batch: b + 1,
                    });
                }
                g.backward(y, &loss.grad)?
            };
            adam.step(&mut model.params, &grads.params)?;
        }
        let tr = evaluate(&model, data, &train_ids, config.batch_size)?;
        let te = evaluate(&model, data, &test_ids, config.batch_size)?;
        let m = EpochMetrics {
            epoch: epoch + 1,
            loss: tr.loss,
            mae: tr.mae,
            val_loss: te.loss,
            val_mae: te.mae,
        };
        if ![m.loss, m.mae, m.val_loss, m.val_mae].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                epoch: epoch + 1,
                batch: 0,
            });
        }
        log::info!(
            "epoch {} loss {:.4} mae {:.4} val_loss {:.4} val_mae {:.4}",
            m.epoch,
            m.loss,
            m.mae,
            m.val_loss,
            m.val_mae
        );
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(TrainOutcome {
        model,
        metrics,
        train_ids,
        test_ids,
    })
}

/// Metrics series with the run's seeds on a leading `#` line.
pub fn metrics_csv(metrics: &[EpochMetrics], seeds: &Seeds) -> String {
    let mut out = format!(
        "# seeds weights={} split={} shuffle={} dropout={}\n{METRICS_CSV_HEADER}\n",
        seeds.weights, seeds.split, seeds.shuffle, seeds.dropout
    );
    for m in metrics {
        let _ = writeln!(out, "{},{},{},{},{}", m.epoch, m.loss, m.mae, m.val_loss, m.val_mae);
    }
    out
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AGERESCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    spec: NetworkSpec,
    config: TrainConfig,
    stats_initialized: bool,
}

/// Everything needed to rebuild a trained model.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub config: TrainConfig,
}

/// Serialized layout (all integers u32 little-endian):
/// magic, version, header length, JSON header (spec + config), record count,
/// then per tensor: name length, name, rank, extents, f32 LE values.
/// Parameters come first in registration order, followed by each batch-norm
/// layer's `<layer>.moving_mean` and `<layer>.moving_variance`.
pub fn encode_checkpoint(model: &Model, config: &TrainConfig) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        spec: model.network.spec().clone(),
        config: config.clone(),
        stats_initialized: model.stats.iter().all(|(_, s)| s.initialized),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_u32(&mut out, model.params.len() + 2 * model.stats.len())?;
    let mut record = |name: &str, shape: &[usize], values: &[f32]| -> Result<()> {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, shape.len())?;
        for &d in shape {
            put_u32(&mut out, d)?;
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(())
    };
    for (name, t) in model.params.iter() {
        record(name, t.shape(), t.data())?;
    }
    for (name, s) in model.stats.iter() {
        record(&format!("{name}.moving_mean"), &[s.channels()], &s.mean)?;
        record(&format!("{name}.moving_variance"), &[s.channels()], &s.var)?;
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit the u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn tensor(&mut self, expected_name: &str, expected_shape: &[usize]) -> Result<Tensor<f32>> {
        let len = self.u32("record name length")?;
        let name = std::str::from_utf8(self.take(len, "record name")?)
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
        if name != expected_name {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} found where the architecture expects {expected_name:?}"
            )));
        }
        let rank = self.u32("rank")?;
        let shape = (0..rank).map(|_| self.u32("extent")).collect::<Result<Vec<_>>>()?;
        if shape != expected_shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has shape {shape:?}, the architecture expects {expected_shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4, name)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(shape, values)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = r.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = r.u32("header length")?;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(len, "header")?).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let network = Network::new(header.spec)?;
    let count = r.u32("record count")?;
    let mut read = 0usize;
    let mut next = |r: &mut Reader, name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
        if read == count {
            return Err(Error::Checkpoint(format!("tensor {name:?} is missing from the checkpoint")));
        }
        read += 1;
        r.tensor(name, shape)
    };
    let mut params = ParamStore::new();
    for (name, shape) in network.param_shapes() {
        params.insert(name.clone(), next(&mut r, name, shape)?)?;
    }
    let mut stats = StatsStore::new();
    for (name, c) in network.stats_layout() {
        let mean = next(&mut r, &format!("{name}.moving_mean"), &[*c])?;
        let var = next(&mut r, &format!("{name}.moving_variance"), &[*c])?;
        stats.insert(
            name.clone(),
            RunningStats {
                mean: mean.into_data(),
                var: var.into_data(),
                initialized: header.stats_initialized,
            },
        )?;
    }
    if read != count {
        return Err(Error::Checkpoint(format!(
            "{} tensor records beyond those of the architecture",
            count - read
        )));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        model: Model { network, params, stats },
        config: header.config,
    })
}

pub fn save_checkpoint(path: &Path, model: &Model, config: &TrainConfig) -> Result<()> {
    fs::write(path, encode_checkpoint(model, config)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
