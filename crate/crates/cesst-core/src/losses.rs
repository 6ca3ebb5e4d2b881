//! Training objective: multi-scale SSIM+L1 mix plus relative-error term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MultiScalePrediction, SCALES};
use crate::tensor::{Element, PadMode, Tensor};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the relative-error term in the total loss.
    pub lambda1: f64,
    /// SSIM share inside the mix loss; the rest is L1.
    pub mix_alpha: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    /// Denominator guard: ground truth may contain exact zeros.
    pub mrae_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 100.0,
            mix_alpha: 0.84,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            mrae_eps: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0) {
            return Err(Error::Config(format!("lambda1 must be > 0, got {}", self.lambda1)));
        }
        if !(0.0..=1.0).contains(&self.mix_alpha) {
            return Err(Error::Config(format!(
                "mix_alpha must be in [0, 1], got {}",
                self.mix_alpha
            )));
        }
        if self.ssim_window % 2 == 0 || self.ssim_window == 0 {
            return Err(Error::Config("ssim window must be odd".into()));
        }
        Ok(())
    }
}

fn gaussian_kernel<E: Element>(channels: usize, window: usize, sigma: f64) -> Result<Tensor<E>> {
    let c = (window as f64 - 1.0) / 2.0;
    let mut k = Vec::with_capacity(window * window);
    let mut sum = 0.0;
    for i in 0..window {
        for j in 0..window {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            let v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            k.push(v);
            sum += v;
        }
    }
    let one_channel: Vec<E> = k.into_iter().map(|v| E::from_f64(v / sum)).collect();
    let mut data = Vec::with_capacity(channels * window * window);
    for _ in 0..channels {
        data.extend_from_slice(&one_channel);
    }
    Tensor::from_vec(data, &[channels, 1, window, window])
}

fn blur<E: Element>(x: &Tensor<E>, kernel: &Tensor<E>, window: usize) -> Result<Tensor<E>> {
    let pad = window / 2;
    let c = x.dims()[1];
    x.pad2d([pad, pad, pad, pad], PadMode::Reflect)?
        .conv2d(kernel, None, 1, 0, c)
}

/// Mean SSIM over a `[B, C, H, W]` pair, Gaussian window, data range 1,
/// reflection-padded so it stays defined on maps smaller than the window.
pub fn ssim<E: Element>(x: &Tensor<E>, y: &Tensor<E>, cfg: &LossConfig) -> Result<Tensor<E>> {
    if x.dims() != y.dims() {
        return Err(Error::ShapeMismatch {
            op: "ssim",
            lhs: x.shape().to_string(),
            rhs: y.shape().to_string(),
        });
    }
    let c = x.dims()[1];
    let (h, w) = (x.dims()[2], x.dims()[3]);
    let window = cfg.ssim_window.min(2 * h.min(w) - 1) | 1;
    let kernel = gaussian_kernel::<E>(c, window, cfg.ssim_sigma)?;
    let c1 = E::from_f64(cfg.ssim_k1 * cfg.ssim_k1);
    let c2 = E::from_f64(cfg.ssim_k2 * cfg.ssim_k2);

    let mu_x = blur(x, &kernel, window)?;
    let mu_y = blur(y, &kernel, window)?;
    let mu_xx = mu_x.mul(&mu_x)?;
    let mu_yy = mu_y.mul(&mu_y)?;
    let mu_xy = mu_x.mul(&mu_y)?;
    let sigma_x = blur(&x.mul(x)?, &kernel, window)?.sub(&mu_xx)?;
    let sigma_y = blur(&y.mul(y)?, &kernel, window)?.sub(&mu_yy)?;
    let sigma_xy = blur(&x.mul(y)?, &kernel, window)?.sub(&mu_xy)?;

    let num = mu_xy
        .mul_scalar(E::from_f64(2.0))?
        .add_scalar(c1)?
        .mul(&sigma_xy.mul_scalar(E::from_f64(2.0))?.add_scalar(c2)?)?;
    let den = mu_xx
        .add(&mu_yy)?
        .add_scalar(c1)?
        .mul(&sigma_x.add(&sigma_y)?.add_scalar(c2)?)?;
    num.div(&den)?.mean_all()
}

fn check_pyramids<E: Element>(
    pred: &MultiScalePrediction<E>,
    gt: &[Tensor<E>; SCALES],
) -> Result<()> {
    for (p, g) in pred.levels.iter().zip(gt) {
        if p.dims() != g.dims() {
            return Err(Error::ShapeMismatch {
                op: "loss",
                lhs: p.shape().to_string(),
                rhs: g.shape().to_string(),
            });
        }
    }
    Ok(())
}

/// Per-scale `alpha * (1 - SSIM) + (1 - alpha) * L1`, summed over scales.
pub fn loss_mix<E: Element>(
    pred: &MultiScalePrediction<E>,
    gt: &[Tensor<E>; SCALES],
    cfg: &LossConfig,
) -> Result<Tensor<E>> {
    check_pyramids(pred, gt)?;
    let alpha = E::from_f64(cfg.mix_alpha);
    let mut total = Tensor::scalar(E::zero());
    for (p, g) in pred.levels.iter().zip(gt) {
        let l1 = p.sub(g)?.abs()?.mean_all()?;
        let scale_term = if cfg.mix_alpha == 0.0 {
            l1
        } else {
            let ssim_loss = Tensor::scalar(E::one()).sub(&ssim(p, g, cfg)?)?;
            ssim_loss
                .mul_scalar(alpha)?
                .add(&l1.mul_scalar(E::one() - alpha)?)?
        };
        total = total.add(&scale_term)?;
    }
    Ok(total)
}

/// Per-scale mean `|Y - X| / (Y + eps)`, summed over scales.
pub fn loss_mrae<E: Element>(
    pred: &MultiScalePrediction<E>,
    gt: &[Tensor<E>; SCALES],
    eps: f64,
) -> Result<Tensor<E>> {
    check_pyramids(pred, gt)?;
    let eps = E::from_f64(eps);
    let mut total = Tensor::scalar(E::zero());
    for (p, g) in pred.levels.iter().zip(gt) {
        let term = g
            .sub(p)?
            .abs()?
            .div(&g.add_scalar(eps)?)?
            .mean_all()?;
        total = total.add(&term)?;
    }
    Ok(total)
}

/// `loss_mix + lambda1 * loss_mrae`.
pub fn loss_total<E: Element>(
    pred: &MultiScalePrediction<E>,
    gt: &[Tensor<E>; SCALES],
    cfg: &LossConfig,
) -> Result<Tensor<E>> {
    let mix = loss_mix(pred, gt, cfg)?;
    let mrae = loss_mrae(pred, gt, cfg.mrae_eps)?;
    mix.add(&mrae.mul_scalar(E::from_f64(cfg.lambda1))?)
}

/// Split components, for run records.
pub fn loss_components<E: Element>(
    pred: &MultiScalePrediction<E>,
    gt: &[Tensor<E>; SCALES],
    cfg: &LossConfig,
) -> Result<(E, E, E)> {
    let mix = loss_mix(pred, gt, cfg)?.item()?;
    let mrae = loss_mrae(pred, gt, cfg.mrae_eps)?.item()?;
    Ok((mix, mrae, mix + E::from_f64(cfg.lambda1) * mrae))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pyramid(levels: [Tensor<f64>; 3]) -> MultiScalePrediction<f64> {
        MultiScalePrediction { levels }
    }

    fn constant_pyramid(v: f64) -> [Tensor<f64>; 3] {
        [
            Tensor::full(&[1, 2, 8, 8], v).unwrap(),
            Tensor::full(&[1, 2, 4, 4], v).unwrap(),
            Tensor::full(&[1, 2, 2, 2], v).unwrap(),
        ]
    }

    #[test]
    fn perfect_reconstruction_gives_zero() {
        let cfg = LossConfig::default();
        let gt = constant_pyramid(0.5);
        let pred = pyramid(constant_pyramid(0.5));
        assert!(loss_mix(&pred, &gt, &cfg).unwrap().item().unwrap().abs() < 1e-9);
        assert!(loss_mrae(&pred, &gt, cfg.mrae_eps).unwrap().item().unwrap().abs() < 1e-12);
        assert!(loss_total(&pred, &gt, &cfg).unwrap().item().unwrap().abs() < 1e-7);
    }

    #[test]
    fn alpha_zero_is_pure_multiscale_l1() {
        let cfg = LossConfig {
            mix_alpha: 0.0,
            ..LossConfig::default()
        };
        let gt = constant_pyramid(0.4);
        let pred = pyramid(constant_pyramid(0.5));
        // constant offset 0.1 at three scales: 3 * 0.1
        let v = loss_mix(&pred, &gt, &cfg).unwrap().item().unwrap();
        assert!((v - 0.3).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn mrae_closed_form() {
        // single effective scale: Y=[1,2]-like values, X offset by 10%
        let gt = [
            Tensor::from_vec(vec![1.0, 2.0], &[1, 2, 1, 1]).unwrap(),
            Tensor::full(&[1, 2, 1, 1], 1.0).unwrap(),
            Tensor::full(&[1, 2, 1, 1], 1.0).unwrap(),
        ];
        let pred = pyramid([
            Tensor::from_vec(vec![1.1, 1.8], &[1, 2, 1, 1]).unwrap(),
            Tensor::full(&[1, 2, 1, 1], 1.0).unwrap(),
            Tensor::full(&[1, 2, 1, 1], 1.0).unwrap(),
        ]);
        let v = loss_mrae(&pred, &gt, 0.0).unwrap().item().unwrap();
        assert!((v - 0.1).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn zero_ground_truth_stays_finite() {
        let gt = constant_pyramid(0.0);
        let pred = pyramid(constant_pyramid(0.3));
        let v = loss_mrae(&pred, &gt, 1e-6).unwrap().item().unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn total_is_linear_combination() {
        let cfg = LossConfig {
            lambda1: 100.0,
            ..LossConfig::default()
        };
        let gt = constant_pyramid(0.5);
        let pred = pyramid(constant_pyramid(0.45));
        let mix = loss_mix(&pred, &gt, &cfg).unwrap().item().unwrap();
        let mrae = loss_mrae(&pred, &gt, cfg.mrae_eps).unwrap().item().unwrap();
        let total = loss_total(&pred, &gt, &cfg).unwrap().item().unwrap();
        assert!((total - (mix + 100.0 * mrae)).abs() < 1e-9);
        let cfg0 = LossConfig {
            lambda1: 1e-300,
            ..cfg
        };
        let total0 = loss_total(&pred, &gt, &cfg0).unwrap().item().unwrap();
        assert!((total0 - mix).abs() < 1e-9);
    }

    #[test]
    fn noise_monotonically_increases_loss() {
        use rand::{Rng, SeedableRng};
        let cfg = LossConfig::default();
        let gt = constant_pyramid(0.5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let noise: Vec<f64> = (0..2 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut last = 0.0;
        for (i, amp) in [0.01, 0.05, 0.2].iter().enumerate() {
            let mut levels = constant_pyramid(0.5);
            let bumped: Vec<f64> = noise.iter().map(|n| 0.5 + amp * n).collect();
            levels[0] = Tensor::from_vec(bumped, &[1, 2, 8, 8]).unwrap();
            let v = loss_total(&pyramid(levels), &gt, &cfg).unwrap().item().unwrap();
            assert!(v > last, "amplitude step {i}: {v} <= {last}");
            last = v;
        }
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let cfg = LossConfig::default();
        let x = Tensor::from_vec(
            (0..64).map(|v| (v as f64 / 64.0).sin().abs()).collect(),
            &[1, 1, 8, 8],
        )
        .unwrap();
        let s = ssim(&x, &x, &cfg).unwrap().item().unwrap();
        assert!((s - 1.0).abs() < 1e-9, "got {s}");
    }

    #[test]
    fn ssim_detects_structural_damage() {
        let cfg = LossConfig::default();
        let x = Tensor::from_vec(
            (0..256).map(|v| (v % 16) as f64 / 16.0).collect(),
            &[1, 1, 16, 16],
        )
        .unwrap();
        let y = Tensor::full(&[1, 1, 16, 16], 0.5).unwrap();
        let s = ssim(&x, &y, &cfg).unwrap().item().unwrap();
        assert!(s < 0.5, "flat image should not be structurally similar: {s}");
    }
}
