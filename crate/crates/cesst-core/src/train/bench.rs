//! Wallclock scaling benchmark for the MSA variants.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{
    count_flops, global_msa, shuffle_window_msa, spectral_msa, window_msa, AttentionParams,
    DepthwiseBridge, MsaVariant, WindowSpec,
};
use crate::error::{Error, Result};
use crate::gradcheck::random_tensor;
use crate::params::detach_all;
use crate::tensor::{set_finite_checks, Tensor};

#[derive(Clone, Debug, Serialize)]
pub struct BenchSample {
    pub variant: String,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub m: usize,
    pub heads: usize,
    pub tokens: usize,
    pub macs_scores: u64,
    pub macs_proj: u64,
    pub macs_total: u64,
    pub median_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchFit {
    pub variant: String,
    pub r_squared: f64,
    pub seconds_per_token: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub samples: Vec<BenchSample>,
    pub fits: Vec<BenchFit>,
}

/// Median-of-5 wallclock per variant per token count (square grids), plus a
/// least-squares linear fit of time against HW for the linear-cost variants.
pub fn bench_scaling(
    variants: &[MsaVariant],
    token_sizes: &[usize],
    c: usize,
    m: usize,
    heads: usize,
) -> Result<BenchReport> {
    if token_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArg {
            op: "bench_scaling",
            msg: "token sizes must be strictly ascending".into(),
        });
    }
    let sides: Vec<usize> = token_sizes
        .iter()
        .map(|&t| {
            let side = (t as f64).sqrt().round() as usize;
            if side * side != t {
                Err(Error::InvalidArg {
                    op: "bench_scaling",
                    msg: format!("token count {t} is not a square grid"),
                })
            } else if side % m != 0 {
                Err(Error::InvalidArg {
                    op: "bench_scaling",
                    msg: format!("grid side {side} is not a multiple of window {m}"),
                })
            } else {
                Ok(side)
            }
        })
        .collect::<Result<_>>()?;

    let was_checking = crate::tensor::finite_checks_enabled();
    set_finite_checks(false);
    let result = bench_inner(variants, &sides, c, m, heads);
    set_finite_checks(was_checking);
    result
}

fn bench_inner(
    variants: &[MsaVariant],
    sides: &[usize],
    c: usize,
    m: usize,
    heads: usize,
) -> Result<BenchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p1 = AttentionParams::<f32>::new_spatial(&mut rng, c, heads)?;
    let mut p2 = AttentionParams::<f32>::new_spatial(&mut rng, c, heads)?;
    let mut ps = AttentionParams::<f32>::new_spectral(&mut rng, c, heads)?;
    let mut bridge = DepthwiseBridge::<f32>::new(&mut rng, c, m);
    detach_all(&mut p1);
    detach_all(&mut p2);
    detach_all(&mut ps);
    detach_all(&mut bridge);

    let mut samples = Vec::new();
    for &variant in variants {
        for &side in sides {
            let x = random_tensor_f32(&mut rng, &[1, c, side, side]);
            let spec = WindowSpec::new(m, side, side)?;
            let run = || -> Result<()> {
                match variant {
                    MsaVariant::Window => window_msa(&x, &p1, &spec).map(|_| ()),
                    MsaVariant::ShuffleWindow => {
                        shuffle_window_msa(&x, &p1, &p2, &bridge, &spec).map(|_| ())
                    }
                    MsaVariant::Spectral => spectral_msa(&x, &ps).map(|_| ()),
                    MsaVariant::Global => global_msa(&x, &p1).map(|_| ()),
                }
            };
            run()?; // warmup
            let median = median_of_five(&run)?;
            let f = count_flops(variant, c, side, side, m, heads);
            samples.push(BenchSample {
                variant: variant.name().to_string(),
                c,
                h: side,
                w: side,
                m,
                heads,
                tokens: side * side,
                macs_scores: f.scores,
                macs_proj: f.proj,
                macs_total: f.total(),
                median_seconds: median,
            });
        }
    }

    let mut fits = Vec::new();
    for &variant in variants {
        if variant == MsaVariant::Global {
            continue;
        }
        let pts: Vec<(f64, f64)> = samples
            .iter()
            .filter(|s| s.variant == variant.name())
            .map(|s| (s.tokens as f64, s.median_seconds))
            .collect();
        let (slope, r2) = linear_fit(&pts);
        fits.push(BenchFit {
            variant: variant.name().to_string(),
            r_squared: r2,
            seconds_per_token: slope,
        });
    }
    Ok(BenchReport { samples, fits })
}

fn random_tensor_f32(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f32> {
    random_tensor(rng, dims, -1.0, 1.0).cast::<f32>()
}

/// Median of 5 timing samples; each sample repeats the workload until it
/// accumulates at least ~8 ms so short runs are not timer-noise limited.
fn median_of_five(run: &dyn Fn() -> Result<()>) -> Result<f64> {
    let t0 = Instant::now();
    run()?;
    let single = t0.elapsed().as_secs_f64();
    let reps = (0.008 / single.max(1e-9)).ceil().max(1.0) as usize;
    let mut times = Vec::with_capacity(5);
    for _ in 0..5 {
        let t0 = Instant::now();
        for _ in 0..reps {
            run()?;
        }
        times.push(t0.elapsed().as_secs_f64() / reps as f64);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(times[2])
}

/// Least squares `y = a + b x`; returns `(b, R^2)`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in points {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (x, y) in points {
        let pred = intercept + slope * x;
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - my) * (y - my);
    }
    (slope, 1.0 - ss_res / ss_tot)
}

pub fn bench_csv(report: &BenchReport) -> String {
    let mut out = String::from(
        "variant,C,H,W,M,heads,tokens,macs_scores,macs_proj,macs_total,median_seconds\n",
    );
    for s in &report.samples {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            s.variant,
            s.c,
            s.h,
            s.w,
            s.m,
            s.heads,
            s.tokens,
            s.macs_scores,
            s.macs_proj,
            s.macs_total,
            s.median_seconds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_recovers_exact_line() {
        let pts: Vec<(f64, f64)> = (1..6).map(|i| (i as f64, 3.0 + 2.0 * i as f64)).collect();
        let (slope, r2) = linear_fit(&pts);
        assert!((slope - 2.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_ascending_and_non_square_sizes() {
        assert!(bench_scaling(&[MsaVariant::Window], &[256, 64], 8, 4, 2).is_err());
        assert!(bench_scaling(&[MsaVariant::Window], &[60], 8, 4, 2).is_err());
    }
}
