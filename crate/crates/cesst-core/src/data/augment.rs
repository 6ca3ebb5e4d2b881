//! Seeded crops and lossless geometric augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::synth::make_pyramid;
use super::{HsiCube, RgbImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ground truth at full, half, and quarter resolution.
#[derive(Clone)]
pub struct GtPyramid {
    pub levels: [HsiCube; 3],
}

/// One training sample: RGB input plus its supervision pyramid.
#[derive(Clone)]
pub struct SamplePair {
    pub rgb: RgbImage,
    pub pyramid: GtPyramid,
}

/// Reverse the trailing axis (horizontal flip for [., H, W]).
pub fn flip_h(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let axis = t.rank() - 1;
    let n = t.dims()[axis];
    let idx: Vec<usize> = (0..n).rev().collect();
    t.index_select(axis, &idx)
}

/// Reverse the second-to-last axis (vertical flip).
pub fn flip_v(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let axis = t.rank() - 2;
    let n = t.dims()[axis];
    let idx: Vec<usize> = (0..n).rev().collect();
    t.index_select(axis, &idx)
}

/// Rotate the trailing two axes by `k * 90` degrees counter-clockwise.
/// Exact pixel permutation.
pub fn rot90(t: &Tensor<f32>, k: usize) -> Result<Tensor<f32>> {
    let mut out = t.clone();
    for _ in 0..(k % 4) {
        // transpose H/W, then flip vertically
        let rank = out.rank();
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        out = flip_v(&out.permute(&axes)?)?;
    }
    Ok(out)
}

/// One seeded random crop, a `k * 90`-degree rotation, and independent
/// horizontal/vertical flips, applied identically to the RGB image and the
/// cube; the supervision pyramid is rebuilt from the augmented cube.
pub fn crop_and_augment(
    cube: &HsiCube,
    rgb: &RgbImage,
    seed: u64,
    crop: usize,
) -> Result<SamplePair> {
    let (h, w) = (cube.height(), cube.width());
    if rgb.height() != h || rgb.width() != w {
        return Err(Error::Data(format!(
            "cube {h}x{w} and rgb {}x{} disagree",
            rgb.height(),
            rgb.width()
        )));
    }
    if crop > h.min(w) {
        return Err(Error::Data(format!(
            "crop {crop} exceeds image extent {}x{}",
            h, w
        )));
    }
    if crop % 4 != 0 {
        return Err(Error::Data(format!("crop must be divisible by 4, got {crop}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0 = rng.gen_range(0..=h - crop);
    let x0 = rng.gen_range(0..=w - crop);
    let k = rng.gen_range(0..4usize);
    let fh = rng.gen_bool(0.5);
    let fv = rng.gen_bool(0.5);

    let apply = |t: &Tensor<f32>| -> Result<Tensor<f32>> {
        let mut t = t.narrow(1, y0, crop)?.narrow(2, x0, crop)?;
        t = rot90(&t, k)?;
        if fh {
            t = flip_h(&t)?;
        }
        if fv {
            t = flip_v(&t)?;
        }
        Ok(t)
    };

    let cube_aug = HsiCube::new(apply(cube.data())?)?;
    let rgb_aug = RgbImage::new(apply(rgb.data())?)?;
    Ok(SamplePair {
        pyramid: make_pyramid(&cube_aug)?,
        rgb: rgb_aug,
    })
}
