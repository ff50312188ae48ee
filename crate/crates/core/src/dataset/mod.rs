//! UTKFace-format ingestion.
//!
//! Labels come from filenames of the form `[age]_[gender]_[race]_[datetime].[ext]`.
//! Images are scaled into `[0, 1]` and resized bilinearly to the network input.

pub mod synth;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const MAX_AGE: u32 = 116;

/// Corpus size and training count of the reference split; other corpus sizes
/// keep the same ratio.
pub const REFERENCE_CORPUS: usize = 23705;
pub const REFERENCE_TRAIN: usize = 16593;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UtkLabel {
    pub age: u32,
    pub gender: u8,
    pub race: u8,
    pub timestamp: String,
}

/// Parses `[age]_[gender]_[race]_[datetime].ext` (any extension, including the
/// cropped variant's `.jpg.chip.jpg`).
pub fn parse_utkface_filename(name: &str) -> Result<UtkLabel> {
    let err = |reason: &str| Error::Parse {
        name: name.to_string(),
        reason: reason.to_string(),
    };
    let stem = name.split('.').next().unwrap_or("");
    let fields: Vec<&str> = stem.split('_').collect();
    if fields.len() < 4 || fields.iter().take(4).any(|f| f.is_empty()) {
        return Err(err("expected four underscore-separated fields"));
    }
    let age: u32 = fields[0].parse().map_err(|_| err("age is not a base-10 integer"))?;
    if age > MAX_AGE {
        return Err(err("age outside 0..=116"));
    }
    let gender = fields[1].parse().map_err(|_| err("gender is not an integer"))?;
    let race = fields[2].parse().map_err(|_| err("race is not an integer"))?;
    Ok(UtkLabel {
        age,
        gender,
        race,
        timestamp: fields[3..].join("_"),
    })
}

/// One normalized face image with its label.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `C x H x W`, RGB, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub age: u32,
    pub source_id: String,
}

/// Bilinear resize of a `C x H x W` tensor using half-pixel centers.
pub fn resize_bilinear(image: &Tensor<f32>, size: (usize, usize)) -> Result<Tensor<f32>> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::dim("resize_bilinear", format!("expected C x H x W, got {:?}", image.shape())));
    };
    let (oh, ow) = size;
    if oh == 0 || ow == 0 {
        return Err(Error::dim("resize_bilinear", "target size must be positive"));
    }
    if (oh, ow) == (h, w) {
        return Ok(image.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(oh, h);
    let xs = axis(ow, w);
    let src = image.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Converts 8-bit RGB pixels (row-major, interleaved) into a `3 x H x W` tensor in `[0, 1]`.
pub fn normalize_rgb8(pixels: &[u8], height: usize, width: usize) -> Result<Tensor<f32>> {
    if pixels.len() != height * width * 3 {
        return Err(Error::dim(
            "normalize_rgb8",
            format!("{} bytes for a {height}x{width} RGB image", pixels.len()),
        ));
    }
    let plane = height * width;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * plane + i] = px[ch] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, height, width], data)
}

/// Decodes, scales to `[0, 1]` and resizes one labelled image.
pub fn load_and_normalize(path: &Path, target_size: (usize, usize)) -> Result<Sample> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Parse {
            name: path.display().to_string(),
            reason: "file name is not valid UTF-8".into(),
        })?;
    let label = parse_utkface_filename(name)?;
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let tensor = normalize_rgb8(rgb.as_raw(), h as usize, w as usize)?;
    Ok(Sample {
        image: resize_bilinear(&tensor, target_size)?,
        age: label.age,
        source_id: name.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub path: PathBuf,
    pub age: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Indexed corpus with a deterministic train/test partition of record ids.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub records: Vec<Record>,
    pub split_seed: u64,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    /// Files that were not indexed, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Training-set size for a corpus of `n` records: `round(n * 16593 / 23705)`.
pub fn train_count(n: usize) -> usize {
    (2 * n * REFERENCE_TRAIN + REFERENCE_CORPUS) / (2 * REFERENCE_CORPUS)
}

/// Seeded shuffle of `0..n` cut at [`train_count`]. Both lists come back sorted.
pub fn split(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 valid records to split, found {n}")));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut RngStream::new(seed, 0).rng());
    let cut = train_count(n).clamp(1, n - 1);
    let mut train = ids[..cut].to_vec();
    let mut test = ids[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

impl DatasetIndex {
    pub fn from_records(records: Vec<Record>, split_seed: u64) -> Result<Self> {
        let (train_ids, test_ids) = split(records.len(), split_seed)?;
        Ok(Self {
            records,
            split_seed,
            train_ids,
            test_ids,
            skipped: Vec::new(),
        })
    }

    /// Indexes every regular file in `dir` (sorted by name). Files whose names
    /// do not parse are skipped with a warning.
    pub fn scan(dir: &Path, split_seed: u64) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Config(format!("data directory {} does not exist", dir.display())));
        }
        // absolute paths keep the manifest valid from any working directory
        let dir = dir.canonicalize()?;
        let mut names: Vec<(String, PathBuf)> = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_file() {
                continue;
            }
            names.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
        if names.is_empty() {
            return Err(Error::Config(format!("data directory {} is empty", dir.display())));
        }
        names.sort();
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        for (name, path) in names {
            match parse_utkface_filename(&name) {
                Ok(label) => records.push(Record { path, age: label.age }),
                Err(e) => {
                    log::warn!("skipping {name}: {e}");
                    skipped.push((name, e.to_string()));
                }
            }
        }
        let mut index = Self::from_records(records, split_seed)?;
        index.skipped = skipped;
        Ok(index)
    }

    pub fn split_of(&self, id: usize) -> Split {
        if self.train_ids.binary_search(&id).is_ok() {
            Split::Train
        } else {
            Split::Test
        }
    }

    /// One line per record: `path<TAB>age<TAB>split`.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for (id, r) in self.records.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}", r.path.display(), r.age, self.split_of(id).as_str());
        }
        out
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        fs::write(path, self.manifest())?;
        Ok(())
    }

    /// Reads a manifest back; the split comes from its third column.
    pub fn read_manifest(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut records = Vec::new();
        let mut train_ids = Vec::new();
        let mut test_ids = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| Error::Parse {
                name: format!("{}:{}", path.display(), lineno + 1),
                reason: reason.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected path<TAB>age<TAB>split"));
            }
            let age: u32 = cols[1].parse().map_err(|_| bad("age is not an integer"))?;
            let id = records.len();
            match cols[2] {
                "train" => train_ids.push(id),
                "test" => test_ids.push(id),
                _ => return Err(bad("split must be train or test")),
            }
            records.push(Record {
                path: PathBuf::from(cols[0]),
                age,
            });
        }
        Ok(Self {
            records,
            split_seed: 0,
            train_ids,
            test_ids,
            skipped: Vec::new(),
        })
    }

    pub fn summary(&self) -> String {
        format!(
            "total={} train={} test={} skipped={}",
            self.records.len(),
            self.train_ids.len(),
            self.test_ids.len(),
            self.skipped.len()
        )
    }
}

/// Batch id lists for one epoch: shuffled by `(shuffle_seed, epoch)`, final
/// partial batch kept.
pub fn batches(ids: &[usize], batch_size: usize, shuffle_seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let mut order = ids.to_vec();
    order.shuffle(&mut RngStream::new(shuffle_seed, epoch).rng());
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Decoded samples addressed by record id. Records that fail to decode are
/// absent and excluded from every id list.
#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<Option<Sample>>,
    pub image_size: (usize, usize),
}

impl Dataset {
    pub fn load(index: &DatasetIndex, image_size: (usize, usize)) -> Self {
        let all: Vec<usize> = (0..index.records.len()).collect();
        Self::load_only(index, &all, image_size)
    }

    /// Decodes only the listed records; the rest stay absent.
    pub fn load_only(index: &DatasetIndex, ids: &[usize], image_size: (usize, usize)) -> Self {
        let mut samples = vec![None; index.records.len()];
        for &id in ids {
            let Some(r) = index.records.get(id) else { continue };
            match load_and_normalize(&r.path, image_size) {
                Ok(s) => samples[id] = Some(s),
                Err(e) => log::warn!("skipping {}: {e}", r.path.display()),
            }
        }
        Self { samples, image_size }
    }

    pub fn from_samples(samples: Vec<Sample>, image_size: (usize, usize)) -> Self {
        Self {
            samples: samples.into_iter().map(Some).collect(),
            image_size,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn loaded(&self) -> usize {
        self.samples.iter().filter(|s| s.is_some()).count()
    }

    pub fn get(&self, id: usize) -> Option<&Sample> {
        self.samples.get(id).and_then(|s| s.as_ref())
    }

    /// Keeps only ids whose image decoded.
    pub fn available(&self, ids: &[usize]) -> Vec<usize> {
        ids.iter().copied().filter(|&i| self.get(i).is_some()).collect()
    }

    /// Stacks samples into an `N x C x H x W` image tensor and an `N x 1` age tensor.
    pub fn batch(&self, ids: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut images = Vec::new();
        let mut ages = Vec::with_capacity(ids.len());
        let mut shape = None;
        for &id in ids {
            let s = self
                .get(id)
                .ok_or_else(|| Error::Contract(format!("record {id} has no decoded image")))?;
            shape.get_or_insert_with(|| s.image.shape().to_vec());
            images.extend_from_slice(s.image.data());
            ages.push(s.age as f32);
        }
        let Some(mut shape) = shape else {
            return Err(Error::Contract("empty batch".into()));
        };
        shape.insert(0, ids.len());
        Ok((Tensor::new(shape, images)?, Tensor::new(vec![ids.len(), 1], ages)?))
    }
}

/// Checks that no id appears in both lists.
pub fn disjoint(a: &[usize], b: &[usize]) -> bool {
    let set: BTreeSet<_> = a.iter().collect();
    !b.iter().any(|x| set.contains(x))
}
