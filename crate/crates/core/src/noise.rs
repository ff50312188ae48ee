//! Additive white Gaussian noise at calibrated dB levels and the robustness sweep.
//!
//! In the default `power` mode a level of `L` dB means noise with standard
//! deviation `reference_std * 10^(L / 20)` on `[0, 1]` pixels, so higher levels
//! are noisier. `snr` mode instead sets `sigma = rms(image) * 10^(-L / 20)`.

use std::fmt::Write as _;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::trainer::{evaluate_with, Model};

pub const DEFAULT_REFERENCE_STD: f64 = 0.01;
pub const DEFAULT_LEVELS_DB: [f64; 6] = [2.0, 5.0, 8.0, 10.0, 12.0, 15.0];
pub const SWEEP_CSV_HEADER: &str = "level_db,clean_mae,noisy_mae,degradation_pct";

/// Degradation figures reported for the full-size model: `(level_db, percent, bound_only)`.
/// `bound_only` marks an upper bound rather than a point value.
pub const PUBLISHED_DEGRADATION: [(f64, f64, bool); 3] = [(2.0, 0.02, false), (5.0, 0.07, false), (15.0, 1.5, true)];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DbMode {
    #[default]
    Power,
    Snr,
}

impl FromStr for DbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(DbMode::Power),
            "snr" => Ok(DbMode::Snr),
            other => Err(Error::Config(format!("unknown dB mode {other:?} (expected power or snr)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// `-inf` is the noiseless control level.
    pub level_db: f64,
    pub reference_std: f64,
    pub seed: u64,
    pub mode: DbMode,
}

impl NoiseSpec {
    pub fn new(level_db: f64, reference_std: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            level_db,
            reference_std,
            seed,
            mode: DbMode::Power,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reference_std > 0.0 && self.reference_std.is_finite()) {
            return Err(Error::Config(format!("reference_std {} must be positive", self.reference_std)));
        }
        if self.level_db.is_nan() || self.level_db == f64::INFINITY {
            return Err(Error::Config(format!("noise level {} dB is not usable", self.level_db)));
        }
        Ok(())
    }

    pub fn with_level(self, level_db: f64) -> Self {
        Self { level_db, ..self }
    }

    /// Noise standard deviation in power mode.
    pub fn sigma(&self) -> f64 {
        self.reference_std * 10f64.powf(self.level_db / 20.0)
    }

    fn sigma_for(&self, image: &[f32]) -> f64 {
        match self.mode {
            DbMode::Power => self.sigma(),
            DbMode::Snr => {
                if self.level_db == f64::NEG_INFINITY {
                    return 0.0;
                }
                let ms = image.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / image.len().max(1) as f64;
                ms.sqrt() * 10f64.powf(-self.level_db / 20.0)
            }
        }
    }
}

/// Image plus Gaussian noise, before clamping. Determined by `(spec.seed, stream)`.
pub fn add_awgn(image: &Tensor<f32>, spec: &NoiseSpec, stream: RngStream) -> Result<Tensor<f32>> {
    spec.validate()?;
    let sigma = spec.sigma_for(image.data());
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = stream.rng();
    let data = image.data().iter().map(|&v| (v as f64 + normal.sample(&mut rng)) as f32).collect();
    Tensor::new(image.shape().to_vec(), data)
}

/// `add_awgn` followed by clamping into `[0, 1]`.
pub fn inject_awgn(image: &Tensor<f32>, spec: &NoiseSpec, stream_index: u64) -> Result<Tensor<f32>> {
    let noisy = add_awgn(image, spec, RngStream::new(spec.seed, stream_index))?;
    Ok(noisy.map(|v| v.clamp(0.0, 1.0)))
}

/// `20 log10(std(noisy - clean) / reference_std)`; `-inf` when the two are identical.
pub fn measure_noise_level(clean: &Tensor<f32>, noisy: &Tensor<f32>, reference_std: f64) -> Result<f64> {
    if clean.shape() != noisy.shape() {
        return Err(Error::dim(
            "measure_noise_level",
            format!("{:?} vs {:?}", clean.shape(), noisy.shape()),
        ));
    }
    let n = clean.len() as f64;
    let diffs = || clean.data().iter().zip(noisy.data()).map(|(&c, &y)| y as f64 - c as f64);
    let mean = diffs().sum::<f64>() / n;
    let var = diffs().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(20.0 * (var.sqrt() / reference_std).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationPoint {
    pub level_db: f64,
    pub clean_mae: f64,
    pub noisy_mae: f64,
    pub degradation_pct: f64,
}

impl DegradationPoint {
    pub fn new(level_db: f64, clean_mae: f64, noisy_mae: f64) -> Self {
        Self {
            level_db,
            clean_mae,
            noisy_mae,
            degradation_pct: (noisy_mae - clean_mae) / clean_mae * 100.0,
        }
    }
}

/// Clean MAE once, then MAE with noise at each level over the same ids in the
/// same order. Level `i` draws from stream `i`, sample `id` from its child `id`.
pub fn degradation_sweep(
    model: &Model,
    data: &Dataset,
    ids: &[usize],
    levels: &[f64],
    base: NoiseSpec,
    batch_size: usize,
) -> Result<Vec<DegradationPoint>> {
    if levels.is_empty() {
        return Err(Error::Config("noise sweep needs at least one level".into()));
    }
    base.validate()?;
    let clean = evaluate_with(model, data, ids, batch_size, |_, img| Ok(img.clone()))?;
    let mut points = Vec::with_capacity(levels.len());
    for (li, &level) in levels.iter().enumerate() {
        let spec = base.with_level(level);
        spec.validate()?;
        let level_stream = RngStream::new(spec.seed, li as u64);
        let noisy = evaluate_with(model, data, ids, batch_size, |id, img| {
            Ok(add_awgn(img, &spec, level_stream.child(id as u64))?.map(|v| v.clamp(0.0, 1.0)))
        })?;
        points.push(DegradationPoint::new(level, clean.mae, noisy.mae));
    }
    Ok(points)
}

fn fmt_level(level: f64) -> String {
    if level == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{level}")
    }
}

pub fn sweep_csv(points: &[DegradationPoint]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_level(p.level_db),
            p.clean_mae,
            p.noisy_mae,
            p.degradation_pct
        );
    }
    out
}

/// Side-by-side table of measured degradation against the published full-size figures.
pub fn comparison_table(points: &[DegradationPoint]) -> String {
    let mut out = String::from("level_db  measured_pct  published_full_scale_pct\n");
    for p in points {
        let published = PUBLISHED_DEGRADATION
            .iter()
            .find(|(l, _, _)| *l == p.level_db)
            .map(|&(_, v, bound)| if bound { format!("< {v}") } else { format!("{v}") })
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{:>8}  {:>12.4}  {:>24}", fmt_level(p.level_db), p.degradation_pct, published);
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
