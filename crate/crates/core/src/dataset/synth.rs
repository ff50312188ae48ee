//! Synthetic UTKFace-style corpus.
//!
//! Each image is a stylised face whose appearance depends on the encoded age:
//! head size grows through childhood, forehead lines deepen and hair greys with
//! age. Everything else (position, skin tone, background, pixel noise) is
//! random, so a network has to learn the age cues to beat the mean predictor.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::MAX_AGE;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Highest age drawn by the generator.
pub const SYNTH_MAX_AGE: u32 = 90;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    /// Square image side in pixels.
    pub size: u32,
    pub seed: u64,
}

/// Filename for record `index` of a synthetic corpus.
pub fn synth_filename(age: u32, gender: u8, race: u8, index: usize) -> String {
    format!("{age}_{gender}_{race}_2017{index:013}.png")
}

/// Renders one face for `age` from its own random stream.
pub fn render_face(age: u32, size: u32, stream: RngStream) -> RgbImage {
    let mut rng = stream.rng();
    let s = size as f64;
    let a = age.min(MAX_AGE) as f64;

    let bg = [rng.random_range(0.2..0.45), rng.random_range(0.2..0.45), rng.random_range(0.2..0.45)];
    let skin_base = rng.random_range(0.45..0.7);
    let skin = [skin_base + 0.08, skin_base, skin_base - 0.06];
    let growth = (a.min(18.0) / 18.0).sqrt();
    let ry = s * (0.24 + 0.12 * growth);
    let rx = ry * 0.78;
    let cx = s * 0.5 + rng.random_range(-0.06..0.06) * s;
    let cy = s * 0.54 + rng.random_range(-0.05..0.05) * s;
    let hair = 0.12 + 0.7 * ((a - 30.0) / 50.0).clamp(0.0, 1.0);
    let lines = (a / 20.0).floor() as usize;
    let depth = 0.25 * (a / SYNTH_MAX_AGE as f64).min(1.0);
    let pixel_noise = Normal::new(0.0, 0.02).expect("valid std");

    let mut img = RgbImage::new(size, size);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let dx = (fx - cx) / rx;
        let dy = (fy - cy) / ry;
        let r2 = dx * dx + dy * dy;
        let mut rgb = bg;
        if r2 <= 1.0 {
            rgb = skin;
            if dy < -0.55 {
                rgb = [hair; 3];
            } else if dy < -0.15 && lines > 0 {
                // forehead band: evenly spaced darker lines
                let t = (dy + 0.55) / 0.4 * lines as f64;
                if t.fract() < 0.35 {
                    rgb = [skin[0] - depth, skin[1] - depth, skin[2] - depth];
                }
            }
            let eye = ((dx.abs() - 0.38).powi(2) + (dy + 0.05).powi(2)).sqrt();
            if eye < 0.11 {
                rgb = [0.12; 3];
            }
        }
        let mut out = [0u8; 3];
        for c in 0..3 {
            let v = (rgb[c] + pixel_noise.sample(&mut rng)).clamp(0.1, 0.9);
            out[c] = (v * 255.0).round() as u8;
        }
        *px = Rgb(out);
    }
    img
}

/// Writes `config.count` PNG faces into `dir` and returns their paths in index order.
pub fn generate_corpus(dir: &Path, config: SynthConfig) -> Result<Vec<PathBuf>> {
    if config.size == 0 {
        return Err(Error::Config("synthetic image size must be positive".into()));
    }
    fs::create_dir_all(dir)?;
    let labels = RngStream::new(config.seed, 0);
    let mut rng = labels.rng();
    let mut paths = Vec::with_capacity(config.count);
    for index in 0..config.count {
        let age = rng.random_range(0..=SYNTH_MAX_AGE);
        let gender = rng.random_range(0..=1u8);
        let race = rng.random_range(0..=4u8);
        let path = dir.join(synth_filename(age, gender, race, index));
        let img = render_face(age, config.size, RngStream::new(config.seed, 1).child(index as u64));
        img.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_utkface_filename;

    #[test]
    fn names_round_trip() {
        let n = synth_filename(42, 1, 3, 17);
        let l = parse_utkface_filename(&n).unwrap();
        assert_eq!((l.age, l.gender, l.race), (42, 1, 3));
    }

    #[test]
    fn rendering_is_deterministic_and_in_range() {
        let a = render_face(60, 32, RngStream::new(5, 9));
        let b = render_face(60, 32, RngStream::new(5, 9));
        assert_eq!(a, b);
        assert!(a.as_raw().iter().all(|&v| (25..=230).contains(&v)));
    }

    #[test]
    fn hair_brightens_with_age() {
        let mean_top = |age| {
            let img = render_face(age, 64, RngStream::new(1, 1));
            let rows = &img.as_raw()[..64 * 3 * 20];
            rows.iter().map(|&v| v as f64).sum::<f64>() / rows.len() as f64
        };
        assert!(mean_top(85) > mean_top(10));
    }
}
