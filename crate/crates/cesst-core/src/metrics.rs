//! Reconstruction quality metrics with per-band diagnostics.

use serde::Serialize;

use crate::data::{HsiCube, WAVELENGTH_START_NM, WAVELENGTH_STEP_NM};
use crate::error::{Error, Result};

pub const METRIC_EPS: f64 = 1e-6;
/// Zero-norm guard for the spectral angle; effectively exact division so
/// identical spectra measure an angle of zero and per-pixel rescaling
/// cancels to rounding error.
pub const SAM_EPS: f64 = 1e-300;

/// Per-image metric bundle. `psnr` is `+inf` for a perfect reconstruction;
/// JSON output encodes that as the string "inf".
#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub mrae: f64,
    pub rmse: f64,
    #[serde(serialize_with = "serialize_maybe_inf")]
    pub psnr: f64,
    pub sam: f64,
    pub ergas: f64,
    pub per_band_rmse: Vec<f64>,
    pub params: u64,
    pub flops: u64,
}

fn serialize_maybe_inf<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

impl MetricReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("metric report is serializable")
    }

    /// Per-band RMSE as CSV with wavelength labels.
    pub fn band_csv(&self) -> String {
        let mut out = String::from("band_nm,rmse\n");
        for (b, r) in self.per_band_rmse.iter().enumerate() {
            out.push_str(&format!(
                "{},{}\n",
                (WAVELENGTH_START_NM + WAVELENGTH_STEP_NM * b as f64) as u64,
                r
            ));
        }
        out
    }
}

/// All five metrics over flat band-major arrays `[bands * h * w]`.
///
/// MRAE and ERGAS normalize by the reference `y` and are therefore
/// asymmetric; RMSE and PSNR are symmetric. SAM is the mean per-pixel
/// spectral angle in radians. PSNR uses whole-cube MSE with data range 1.
pub fn metric_suite_arrays(
    bands: usize,
    h: usize,
    w: usize,
    x: &[f64],
    y: &[f64],
) -> Result<MetricReport> {
    let n = bands * h * w;
    if x.len() != n || y.len() != n {
        return Err(Error::ShapeMismatch {
            op: "metric_suite",
            lhs: format!("{} values", x.len()),
            rhs: format!("{bands}x{h}x{w} = {n}"),
        });
    }
    let pixels = h * w;

    let mut abs_rel = 0.0;
    let mut sq = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        abs_rel += (b - a).abs() / (b + METRIC_EPS);
        sq += (b - a) * (b - a);
    }
    let mrae = abs_rel / n as f64;
    let mse = sq / n as f64;
    let rmse = mse.sqrt();
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    };

    let mut sam_sum = 0.0;
    for p in 0..pixels {
        let mut dot = 0.0;
        let mut nx = 0.0;
        let mut ny = 0.0;
        for b in 0..bands {
            let (xv, yv) = (x[b * pixels + p], y[b * pixels + p]);
            dot += xv * yv;
            nx += xv * xv;
            ny += yv * yv;
        }
        let cos = dot / (nx.sqrt() * ny.sqrt() + SAM_EPS);
        sam_sum += cos.clamp(-1.0, 1.0).acos();
    }
    let sam = sam_sum / pixels as f64;

    let mut per_band_rmse = Vec::with_capacity(bands);
    let mut ergas_acc = 0.0;
    for b in 0..bands {
        let xs = &x[b * pixels..(b + 1) * pixels];
        let ys = &y[b * pixels..(b + 1) * pixels];
        let band_mse: f64 =
            xs.iter().zip(ys).map(|(&a, &c)| (c - a) * (c - a)).sum::<f64>() / pixels as f64;
        let band_rmse = band_mse.sqrt();
        per_band_rmse.push(band_rmse);
        let mean_y: f64 = ys.iter().sum::<f64>() / pixels as f64;
        let ratio = band_rmse / (mean_y + METRIC_EPS);
        ergas_acc += ratio * ratio;
    }
    // resolution-ratio factor 1: input and output share the pixel grid
    let ergas = 100.0 * (ergas_acc / bands as f64).sqrt();

    Ok(MetricReport {
        mrae,
        rmse,
        psnr,
        sam,
        ergas,
        per_band_rmse,
        params: 0,
        flops: 0,
    })
}

/// Metrics over two cubes of identical shape (f64 accumulation).
pub fn metric_suite(x: &HsiCube, y: &HsiCube) -> Result<MetricReport> {
    let (bands, h, w) = (
        x.data().dims()[0],
        x.data().dims()[1],
        x.data().dims()[2],
    );
    if x.data().dims() != y.data().dims() {
        return Err(Error::ShapeMismatch {
            op: "metric_suite",
            lhs: x.data().shape().to_string(),
            rhs: y.data().shape().to_string(),
        });
    }
    let xv: Vec<f64> = x.data().data().iter().map(|&v| v as f64).collect();
    let yv: Vec<f64> = y.data().data().iter().map(|&v| v as f64).collect();
    metric_suite_arrays(bands, h, w, &xv, &yv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent naive double-loop implementations used as oracles.
    mod oracle {
        use super::METRIC_EPS;

        pub fn mrae(bands: usize, pixels: usize, x: &[f64], y: &[f64]) -> f64 {
            let mut acc = 0.0;
            for b in 0..bands {
                for p in 0..pixels {
                    let i = b * pixels + p;
                    acc += (y[i] - x[i]).abs() / (y[i] + METRIC_EPS);
                }
            }
            acc / (bands * pixels) as f64
        }

        pub fn rmse(bands: usize, pixels: usize, x: &[f64], y: &[f64]) -> f64 {
            let mut acc = 0.0;
            for b in 0..bands {
                for p in 0..pixels {
                    let i = b * pixels + p;
                    acc += (y[i] - x[i]).powi(2);
                }
            }
            (acc / (bands * pixels) as f64).sqrt()
        }

        pub fn psnr(bands: usize, pixels: usize, x: &[f64], y: &[f64]) -> f64 {
            let r = rmse(bands, pixels, x, y);
            if r == 0.0 {
                f64::INFINITY
            } else {
                -20.0 * r.log10()
            }
        }

        pub fn sam(bands: usize, pixels: usize, x: &[f64], y: &[f64]) -> f64 {
            let mut acc = 0.0;
            for p in 0..pixels {
                let mut dot = 0.0;
                let mut nx = 0.0;
                let mut ny = 0.0;
                for b in 0..bands {
                    dot += x[b * pixels + p] * y[b * pixels + p];
                    nx += x[b * pixels + p] * x[b * pixels + p];
                    ny += y[b * pixels + p] * y[b * pixels + p];
                }
                acc += (dot / (nx.sqrt() * ny.sqrt() + super::SAM_EPS))
                    .clamp(-1.0, 1.0)
                    .acos();
            }
            acc / pixels as f64
        }

        pub fn ergas(bands: usize, pixels: usize, x: &[f64], y: &[f64]) -> f64 {
            let mut acc = 0.0;
            for b in 0..bands {
                let mut mse = 0.0;
                let mut mean = 0.0;
                for p in 0..pixels {
                    let i = b * pixels + p;
                    mse += (y[i] - x[i]).powi(2);
                    mean += y[i];
                }
                mse /= pixels as f64;
                mean /= pixels as f64;
                acc += mse.sqrt().powi(2) / (mean + METRIC_EPS).powi(2);
            }
            100.0 * (acc / bands as f64).sqrt()
        }
    }

    fn random_cubes(seed: u64, bands: usize, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = bands * h * w;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        (x, y)
    }

    #[test]
    fn agrees_with_naive_oracles_on_random_cubes() {
        for seed in 0..5 {
            let (x, y) = random_cubes(seed, 4, 4, 4);
            let r = metric_suite_arrays(4, 4, 4, &x, &y).unwrap();
            let pixels = 16;
            assert!((r.mrae - oracle::mrae(4, pixels, &x, &y)).abs() < 1e-10);
            assert!((r.rmse - oracle::rmse(4, pixels, &x, &y)).abs() < 1e-10);
            assert!((r.psnr - oracle::psnr(4, pixels, &x, &y)).abs() < 1e-10);
            assert!((r.sam - oracle::sam(4, pixels, &x, &y)).abs() < 1e-10);
            assert!((r.ergas - oracle::ergas(4, pixels, &x, &y)).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_inputs_hit_the_degenerate_values() {
        let (x, _) = random_cubes(9, 3, 4, 4);
        let r = metric_suite_arrays(3, 4, 4, &x, &x).unwrap();
        assert_eq!(r.mrae, 0.0);
        assert_eq!(r.rmse, 0.0);
        assert!(r.psnr.is_infinite());
        assert!(r.sam.abs() < 1e-6);
        assert_eq!(r.ergas, 0.0);
    }

    #[test]
    fn orthogonal_spectra_give_right_angle() {
        // two bands; x = (1, 0), y = (0, 1) at every pixel
        let pixels = 4;
        let mut x = vec![0.0; 2 * pixels];
        let mut y = vec![0.0; 2 * pixels];
        for p in 0..pixels {
            x[p] = 1.0;
            y[pixels + p] = 1.0;
        }
        let r = metric_suite_arrays(2, 2, 2, &x, &y).unwrap();
        assert!((r.sam - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn single_band_ergas_closed_form() {
        // RMSE_b = 0.1 against a mean-0.5 reference: 100 * 0.1/0.5 = 20
        let pixels = 16;
        let y = vec![0.5; pixels];
        let x: Vec<f64> = y.iter().map(|v| v - 0.1).collect();
        let r = metric_suite_arrays(1, 4, 4, &x, &y).unwrap();
        assert!((r.ergas - 20.0).abs() < 1e-3, "got {}", r.ergas);
    }

    #[test]
    fn uniform_error_psnr_closed_form() {
        // |y - x| = 0.1 everywhere: RMSE 0.1, PSNR 20 dB
        let y = vec![0.6; 31 * 4];
        let x = vec![0.5; 31 * 4];
        let r = metric_suite_arrays(31, 2, 2, &x, &y).unwrap();
        assert!((r.rmse - 0.1).abs() < 1e-9);
        assert!((r.psnr - 20.0).abs() < 1e-9);
    }

    #[test]
    fn symmetry_and_asymmetry_are_as_defined() {
        let (x, y) = random_cubes(21, 3, 3, 3);
        let ab = metric_suite_arrays(3, 3, 3, &x, &y).unwrap();
        let ba = metric_suite_arrays(3, 3, 3, &y, &x).unwrap();
        assert!((ab.rmse - ba.rmse).abs() < 1e-12);
        assert!((ab.psnr - ba.psnr).abs() < 1e-9);
        assert!((ab.mrae - ba.mrae).abs() > 1e-6, "MRAE should be asymmetric");
        assert!((ab.ergas - ba.ergas).abs() > 1e-6, "ERGAS should be asymmetric");
    }

    #[test]
    fn sam_ignores_per_pixel_positive_rescaling() {
        let (x, y) = random_cubes(33, 4, 3, 3);
        let pixels = 9;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut xs = x.clone();
        let mut ys = y.clone();
        for p in 0..pixels {
            let cx = rng.gen_range(0.5..3.0);
            let cy = rng.gen_range(0.5..3.0);
            for b in 0..4 {
                xs[b * pixels + p] *= cx;
                ys[b * pixels + p] *= cy;
            }
        }
        let a = metric_suite_arrays(4, 3, 3, &x, &y).unwrap().sam;
        let b = metric_suite_arrays(4, 3, 3, &xs, &ys).unwrap().sam;
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn psnr_rmse_self_consistency() {
        let (x, y) = random_cubes(40, 3, 4, 4);
        let r = metric_suite_arrays(3, 4, 4, &x, &y).unwrap();
        assert!((r.psnr - (-20.0 * r.rmse.log10())).abs() < 1e-9);
    }

    #[test]
    fn per_band_csv_has_31_labeled_rows() {
        let x = vec![0.5; 31 * 4];
        let y = vec![0.4; 31 * 4];
        let r = metric_suite_arrays(31, 2, 2, &x, &y).unwrap();
        let csv = r.band_csv();
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 32);
        assert_eq!(lines[0], "band_nm,rmse");
        assert!(lines[1].starts_with("400,"));
        assert!(lines[31].starts_with("700,"));
    }

    #[test]
    fn infinite_psnr_serializes_as_string() {
        let x = vec![0.5; 4];
        let r = metric_suite_arrays(1, 2, 2, &x, &x).unwrap();
        let json = r.to_json();
        assert_eq!(json["psnr"], serde_json::json!("inf"));
    }
}
