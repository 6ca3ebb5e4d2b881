//! Dataset loading and deterministic sample scheduling.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{crop_and_augment, SamplePair};
use super::synth::{hsi_to_rgb, synth_scene};
use super::{load_cube_file, HsiCube, ResponseMatrix, RgbImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Manifest row: cube path plus an optional aligned RGB image. When the RGB
/// path is absent the input is synthesized through the response matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub cube_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb_path: Option<String>,
}

pub struct Dataset {
    samples: Vec<(HsiCube, RgbImage)>,
}

impl Dataset {
    /// Load a JSON manifest (a list of entries with paths relative to the
    /// manifest's directory).
    pub fn load_manifest(path: &Path, response: &ResponseMatrix) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("manifest: {e}")))?;
        if entries.is_empty() {
            return Err(Error::Data("manifest lists no samples".into()));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut samples = Vec::with_capacity(entries.len());
        for entry in &entries {
            let cube = load_cube_file(&resolve(base, &entry.cube_path))?;
            let rgb = match &entry.rgb_path {
                Some(p) => load_rgb_png(&resolve(base, p))?,
                None => hsi_to_rgb(&cube, response)?,
            };
            if rgb.height() != cube.height() || rgb.width() != cube.width() {
                return Err(Error::Data(format!(
                    "{}: rgb {}x{} does not match cube {}x{}",
                    entry.cube_path,
                    rgb.height(),
                    rgb.width(),
                    cube.height(),
                    cube.width()
                )));
            }
            samples.push((cube, rgb));
        }
        Ok(Dataset { samples })
    }

    /// In-memory synthetic set.
    pub fn synthetic(seed: u64, count: usize, size: usize, response: &ResponseMatrix) -> Result<Self> {
        let mut samples = Vec::with_capacity(count);
        for i in 0..count {
            let cube = synth_scene(seed.wrapping_add(i as u64), size, size)?;
            let rgb = hsi_to_rgb(&cube, response)?;
            samples.push((cube, rgb));
        }
        Ok(Dataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, index: usize) -> (&HsiCube, &RgbImage) {
        let (c, r) = &self.samples[index];
        (c, r)
    }

    /// Sample for one training step. The index comes from a per-epoch
    /// shuffled order and the augmentation from a per-step stream, both pure
    /// functions of `(seed, step)`.
    pub fn training_sample(&self, seed: u64, step: u64, crop: usize) -> Result<SamplePair> {
        let n = self.samples.len() as u64;
        let epoch = step / n;
        let slot = (step % n) as usize;
        let order = epoch_order(seed, epoch, self.samples.len());
        let index = order[slot];
        let (cube, rgb) = &self.samples[index];
        crop_and_augment(cube, rgb, mix(seed, 0x617567, step), crop)
    }

    /// Evaluation view: full images, no augmentation.
    pub fn eval_pairs(&self) -> impl Iterator<Item = (&HsiCube, &RgbImage)> {
        self.samples.iter().map(|(c, r)| (c, r))
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Per-epoch Fisher-Yates order, seeded by (seed, epoch) only.
pub fn epoch_order(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x65706f63, epoch));
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// splitmix64-style combination of seed material.
pub fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(b)
        .wrapping_mul(0xBF58476D1CE4E5B9)
        .wrapping_add(c);
    z ^= z >> 30;
    z = z.wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// 8- or 16-bit PNG rescaled linearly to [0, 1].
pub fn load_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let rgb = img.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px.0[c] as f32 / u16::MAX as f32;
        }
    }
    RgbImage::new(Tensor::from_vec(data, &[3, h, w])?)
}

/// 16-bit PNG from a [3, H, W] image in [0, 1].
pub fn save_rgb_png(path: &Path, rgb: &RgbImage) -> Result<()> {
    let (h, w) = (rgb.height(), rgb.width());
    let data = rgb.data().data();
    let mut img = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = data[c * h * w + y as usize * w + x as usize];
            px.0[c] = (v.clamp(0.0, 1.0) * u16::MAX as f32).round() as u16;
        }
    }
    img.save(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
