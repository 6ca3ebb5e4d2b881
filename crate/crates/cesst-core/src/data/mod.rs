//! Hyperspectral cube container, synthetic scenes, RGB synthesis, ground
//! truth pyramids, and training crops/augmentation.

mod augment;
mod dataset;
mod synth;

pub use augment::{crop_and_augment, flip_h, flip_v, rot90, GtPyramid, SamplePair};
pub use dataset::{epoch_order, load_rgb_png, mix, save_rgb_png};
pub use dataset::{Dataset, ManifestEntry};
pub use synth::{hsi_to_rgb, make_pyramid, synth_scene};

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of spectral bands: 400..700 nm at 10 nm steps.
pub const BANDS: usize = 31;
pub const WAVELENGTH_START_NM: f64 = 400.0;
pub const WAVELENGTH_STEP_NM: f64 = 10.0;

pub fn band_wavelengths() -> Vec<f64> {
    (0..BANDS)
        .map(|b| WAVELENGTH_START_NM + WAVELENGTH_STEP_NM * b as f64)
        .collect()
}

/// 31-band hyperspectral cube, values in [0, 1], wavelength-annotated.
#[derive(Clone)]
pub struct HsiCube {
    data: Tensor<f32>,
    wavelengths: Vec<f64>,
}

impl HsiCube {
    /// Wrap a `[31, H, W]` tensor, clamping values into [0, 1].
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        let d = data.dims();
        if d.len() != 3 || d[0] != BANDS {
            return Err(Error::Data(format!(
                "cube must be [{BANDS}, H, W], got {}",
                data.shape()
            )));
        }
        let clamped: Vec<f32> = data.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(HsiCube {
            data: Tensor::from_vec(clamped, d)?,
            wavelengths: band_wavelengths(),
        })
    }

    pub fn data(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn height(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.data.dims()[2]
    }
}

/// 3-channel image, values in [0, 1], channels-first.
#[derive(Clone)]
pub struct RgbImage {
    data: Tensor<f32>,
}

impl RgbImage {
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        let d = data.dims();
        if d.len() != 3 || d[0] != 3 {
            return Err(Error::Data(format!(
                "rgb image must be [3, H, W], got {}",
                data.shape()
            )));
        }
        let clamped: Vec<f32> = data.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(RgbImage {
            data: Tensor::from_vec(clamped, d)?,
        })
    }

    pub fn data(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.data.dims()[2]
    }
}

/// Camera spectral response: three non-negative rows over the 31 band
/// centers, each normalized to sum one.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ResponseMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl ResponseMatrix {
    /// Normalized Gaussians centered at 610/540/470 nm with sigma 35/35/30 nm
    /// sampled at the band centers.
    pub fn default_gaussian() -> Self {
        let centers = [610.0, 540.0, 470.0];
        let sigmas = [35.0, 35.0, 30.0];
        let lambdas = band_wavelengths();
        let rows = centers
            .iter()
            .zip(sigmas)
            .map(|(&c, s)| {
                let raw: Vec<f64> = lambdas
                    .iter()
                    .map(|&l| (-((l - c) * (l - c)) / (2.0 * s * s)).exp())
                    .collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / sum).collect()
            })
            .collect();
        ResponseMatrix { rows }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != 3 || self.rows.iter().any(|r| r.len() != BANDS) {
            return Err(Error::Data(format!(
                "response matrix must be 3 x {BANDS}"
            )));
        }
        if self.rows.iter().flatten().any(|&v| v < 0.0) {
            return Err(Error::Data("response matrix has negative entries".into()));
        }
        Ok(())
    }
}

const HSIC_MAGIC: &[u8; 4] = b"HSIC";

#[derive(Serialize, Deserialize)]
struct CubeHeader {
    dims: Vec<usize>,
    wavelengths: Vec<f64>,
    dtype: String,
}

/// Write a cube: magic "HSIC", u32 LE header length, JSON header
/// `{dims, wavelengths, dtype: "f32le"}`, raw band-major row-major f32 LE.
pub fn save_cube<W: Write>(w: &mut W, cube: &HsiCube) -> Result<()> {
    let header = CubeHeader {
        dims: cube.data.dims().to_vec(),
        wavelengths: cube.wavelengths.clone(),
        dtype: "f32le".into(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    w.write_all(HSIC_MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    let mut buf = Vec::with_capacity(cube.data.numel() * 4);
    for v in cube.data.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn load_cube<R: Read>(r: &mut R) -> Result<HsiCube> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Data("cube truncated before magic".into()))?;
    if &magic != HSIC_MAGIC {
        return Err(Error::Data(format!("bad cube magic {:?}", magic)));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| Error::Data("cube truncated before header".into()))?;
    let header_len = u32::from_le_bytes(len) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::Data("cube header truncated".into()))?;
    let header: CubeHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| Error::Data(format!("cube header: {e}")))?;
    if header.dtype != "f32le" {
        return Err(Error::Data(format!("unsupported cube dtype {}", header.dtype)));
    }
    if header.dims.len() != 3 {
        return Err(Error::Data(format!("cube dims must be rank 3, got {:?}", header.dims)));
    }
    let numel: usize = header.dims.iter().product();
    let mut payload = vec![0u8; numel * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Data("cube payload truncated".into()))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Data("cube payload longer than header dims".into()));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("cube payload contains non-finite values".into()));
    }
    let cube = HsiCube::new(Tensor::from_vec(data, &header.dims)?)?;
    if header.wavelengths != cube.wavelengths {
        return Err(Error::Data("cube wavelength grid mismatch".into()));
    }
    Ok(cube)
}

pub fn save_cube_file(path: &Path, cube: &HsiCube) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    save_cube(&mut f, cube)
}

pub fn load_cube_file(path: &Path) -> Result<HsiCube> {
    let mut f = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    load_cube(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cube(h: usize, w: usize) -> HsiCube {
        let data: Vec<f32> = (0..BANDS * h * w).map(|v| (v % 97) as f32 / 97.0).collect();
        HsiCube::new(Tensor::from_vec(data, &[BANDS, h, w]).unwrap()).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let cube = toy_cube(4, 5);
        let mut buf = Vec::new();
        save_cube(&mut buf, &cube).unwrap();
        let back = load_cube(&mut buf.as_slice()).unwrap();
        assert_eq!(back.data().dims(), cube.data().dims());
        for (a, b) in back.data().data().iter().zip(cube.data().data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_payload_is_reported() {
        let cube = toy_cube(4, 4);
        let mut buf = Vec::new();
        save_cube(&mut buf, &cube).unwrap();
        buf.truncate(buf.len() - 5);
        let err = load_cube(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn payload_length_must_match_dims() {
        // [31,4,4] with 31*16 floats parses; one float short fails
        let cube = toy_cube(4, 4);
        let mut ok = Vec::new();
        save_cube(&mut ok, &cube).unwrap();
        assert!(load_cube(&mut ok.as_slice()).is_ok());
        let mut short = ok.clone();
        short.truncate(short.len() - 4);
        assert!(load_cube(&mut short.as_slice()).is_err());
        // extra bytes beyond the declared dims also fail
        let mut long = ok;
        long.extend_from_slice(&[0, 0, 0, 0]);
        assert!(load_cube(&mut long.as_slice()).is_err());
    }

    #[test]
    fn bad_magic_is_reported() {
        let err = load_cube(&mut b"NOPE".as_slice()).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn response_rows_sum_to_one() {
        let r = ResponseMatrix::default_gaussian();
        r.validate().unwrap();
        for row in &r.rows {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

impl std::fmt::Debug for HsiCube {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "HsiCube({}x{})", self.height(), self.width())
    }
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.height(), self.width())
    }
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Dataset({} samples)", self.len())
    }
}
