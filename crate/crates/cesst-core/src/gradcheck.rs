//! Finite-difference verification of every differentiable op and block.
//!
//! Analytic gradients from the reverse pass are compared coordinate-wise
//! against central differences computed by re-running the forward pass with
//! perturbed leaves. Large tensors are probed on a seeded random subset of
//! coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    shuffle_window_msa, spatial_alignment, spatial_shuffle, spectral_msa, window_msa,
    AttentionParams, DepthwiseBridge, WindowSpec,
};
use crate::blocks::{
    BlockKind, BlockSettings, ChannelLearning, Feb, FebConfig, FusionTriple, MsaKind, Rcab, Sccm,
    Sfam, Ssab, SsabConfig,
};
use crate::error::Result;
use crate::losses::{loss_total, LossConfig};
use crate::model::{Cesst, CesstConfig, MultiScalePrediction};
use crate::params::{named_params, ParamSet};
use crate::tensor::Tensor;

pub struct CheckSettings {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_coords_per_tensor: usize,
    /// Cap on probed coordinates across all tensors (deep models).
    pub max_total_probes: Option<usize>,
    pub seeds: Vec<u64>,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings {
            step: 1e-4,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
            max_coords_per_tensor: 6,
            max_total_probes: None,
            seeds: vec![0, 1, 2],
        }
    }
}

/// Settings for composite blocks: the 1e-4 step of the per-op oracle carries
/// visible h^2 truncation through deep compositions, so blocks are probed
/// with a finer step under the same tolerance.
pub fn block_settings() -> CheckSettings {
    CheckSettings {
        step: 1e-5,
        ..CheckSettings::default()
    }
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub coords: usize,
    pub pass: bool,
}

impl CheckReport {
    pub fn line(&self) -> String {
        format!(
            "{:<40} coords={:<4} max_rel_err={:.3e}  {}",
            self.name,
            self.coords,
            self.max_rel_err,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

struct NoParams;

impl ParamSet<f64> for NoParams {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<f64>)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<f64>)) {}
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.gen_range(lo..hi)).collect(), dims).unwrap()
}

fn set_param<M: ParamSet<f64>>(module: &mut M, target: &str, value: Tensor<f64>) {
    let mut value = Some(value);
    module.visit_mut("", &mut |name, t| {
        if name == target {
            *t = value.take().expect("single match").with_requires_grad();
        }
    });
}

fn perturbed(t: &Tensor<f64>, idx: usize, delta: f64) -> Tensor<f64> {
    let mut data = t.to_vec();
    data[idx] += delta;
    Tensor::from_vec(data, t.dims()).unwrap()
}

/// Compare reverse-pass gradients of `forward(module, inputs)` against
/// central differences at sampled coordinates of every parameter and input.
pub fn check_module<M, F>(
    name: &str,
    module: &mut M,
    inputs: &[Tensor<f64>],
    forward: F,
    settings: &CheckSettings,
    probe_rng: &mut ChaCha8Rng,
) -> Result<CheckReport>
where
    M: ParamSet<f64>,
    F: Fn(&M, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let inputs: Vec<Tensor<f64>> = inputs.iter().map(|t| t.clone().with_requires_grad()).collect();
    let loss = forward(module, &inputs)?;
    let grads = loss.backward()?;

    // analytic gradients keyed by probe target
    enum Target {
        Param(String),
        Input(usize),
    }
    let mut probes: Vec<(Target, usize, f64)> = Vec::new();
    let sample = |numel: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        if numel <= settings.max_coords_per_tensor {
            (0..numel).collect()
        } else {
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < settings.max_coords_per_tensor {
                picked.insert(rng.gen_range(0..numel));
            }
            picked.into_iter().collect()
        }
    };
    for (pname, tensor) in named_params(module) {
        let g = grads.get(&tensor).map(|g| g.to_vec());
        for idx in sample(tensor.numel(), probe_rng) {
            let an = g.as_ref().map_or(0.0, |g| g[idx]);
            probes.push((Target::Param(pname.clone()), idx, an));
        }
    }
    for (i, input) in inputs.iter().enumerate() {
        let g = grads.get(input).map(|g| g.to_vec());
        for idx in sample(input.numel(), probe_rng) {
            let an = g.as_ref().map_or(0.0, |g| g[idx]);
            probes.push((Target::Input(i), idx, an));
        }
    }
    if let Some(cap) = settings.max_total_probes {
        // seeded reservoir-style thinning keeps a spread across tensors
        while probes.len() > cap {
            let drop = probe_rng.gen_range(0..probes.len());
            probes.swap_remove(drop);
        }
    }

    let mut max_rel = 0.0f64;
    let mut pass = true;
    let h = settings.step;
    let mut inputs_fd = inputs.clone();
    for (target, idx, analytic) in &probes {
        let (fp, fm) = match target {
            Target::Param(pname) => {
                let snapshot = named_params(module)
                    .into_iter()
                    .find(|(n, _)| n == pname)
                    .map(|(_, t)| t)
                    .expect("probed parameter exists");
                set_param(module, pname, perturbed(&snapshot, *idx, h));
                let fp = forward(module, &inputs_fd)?.item()?;
                set_param(module, pname, perturbed(&snapshot, *idx, -h));
                let fm = forward(module, &inputs_fd)?.item()?;
                set_param(module, pname, snapshot);
                (fp, fm)
            }
            Target::Input(i) => {
                let snapshot = inputs_fd[*i].clone();
                inputs_fd[*i] = perturbed(&snapshot, *idx, h).with_requires_grad();
                let fp = forward(module, &inputs_fd)?.item()?;
                inputs_fd[*i] = perturbed(&snapshot, *idx, -h).with_requires_grad();
                let fm = forward(module, &inputs_fd)?.item()?;
                inputs_fd[*i] = snapshot;
                (fp, fm)
            }
        };
        let fd = (fp - fm) / (2.0 * h);
        let diff = (analytic - fd).abs();
        let scale = analytic.abs().max(fd.abs());
        let rel = diff / scale.max(1e-3);
        max_rel = max_rel.max(rel);
        if diff > settings.abs_tol + settings.rel_tol * scale {
            pass = false;
        }
    }

    Ok(CheckReport {
        name: name.to_string(),
        max_rel_err: max_rel,
        coords: probes.len(),
        pass,
    })
}

/// Gradient check for a pure tensor function of one input.
pub fn check_op<F>(
    name: &str,
    input_dims: &[usize],
    range: (f64, f64),
    f: F,
    settings: &CheckSettings,
    seed: u64,
) -> Result<CheckReport>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, input_dims, range.0, range.1);
    let weights = random_tensor(&mut rng, input_dims, -1.0, 1.0);
    let shaped = f(&x)?;
    let w_out = random_tensor(&mut rng, shaped.dims(), -1.0, 1.0);
    let _ = weights;
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b9);
    check_module(
        name,
        &mut NoParams,
        &[x],
        |_, inputs| f(&inputs[0])?.mul(&w_out)?.sum_all(),
        settings,
        &mut probe_rng,
    )
}

/// One seed's worth of checks for every differentiable tensor op.
pub fn op_checks(seed: u64, settings: &CheckSettings) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let s = settings;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(777));

    out.push(check_op("op.add", &[2, 3], (-1.0, 1.0), |x| {
        let y = Tensor::from_vec(vec![0.3, -0.7, 1.1], &[3]).unwrap();
        x.add(&y)
    }, s, seed)?);
    out.push(check_op("op.sub", &[2, 3], (-1.0, 1.0), |x| {
        let y = Tensor::from_vec(vec![0.3, -0.7, 1.1], &[3]).unwrap();
        x.sub(&y)
    }, s, seed)?);
    {
        let y = random_tensor(&mut rng, &[2, 3], 0.5, 1.5);
        let y2 = y.clone();
        out.push(check_op("op.mul_broadcast", &[1, 3], (-1.0, 1.0), move |x| x.mul(&y), s, seed)?);
        out.push(check_op("op.div", &[2, 3], (-1.0, 1.0), move |x| x.div(&y2), s, seed)?);
    }
    out.push(check_op("op.neg", &[4], (-1.0, 1.0), |x| x.neg(), s, seed)?);
    out.push(check_op("op.abs", &[4], (0.2, 1.0), |x| x.abs(), s, seed)?);
    out.push(check_op("op.sqrt", &[4], (0.3, 2.0), |x| x.sqrt(), s, seed)?);
    out.push(check_op("op.sigmoid", &[4], (-2.0, 2.0), |x| x.sigmoid(), s, seed)?);
    out.push(check_op("op.relu", &[6], (0.2, 1.0), |x| x.relu(), s, seed)?);
    out.push(check_op("op.gelu", &[6], (-2.0, 2.0), |x| x.gelu(), s, seed)?);
    out.push(check_op("op.clamp", &[4], (0.2, 0.8), |x| x.clamp(0.0, 1.0), s, seed)?);
    out.push(check_op("op.add_scalar", &[4], (-1.0, 1.0), |x| x.add_scalar(0.37), s, seed)?);
    out.push(check_op("op.mul_scalar", &[4], (-1.0, 1.0), |x| x.mul_scalar(-1.7), s, seed)?);
    out.push(check_op("op.sum_axis", &[2, 3, 2], (-1.0, 1.0), |x| x.sum_axis(1, false), s, seed)?);
    out.push(check_op("op.mean_axis", &[2, 3, 2], (-1.0, 1.0), |x| x.mean_axis(2, true), s, seed)?);
    out.push(check_op("op.reshape", &[2, 6], (-1.0, 1.0), |x| x.reshape(&[3, 4]), s, seed)?);
    out.push(check_op("op.permute", &[2, 3, 4], (-1.0, 1.0), |x| x.permute(&[2, 0, 1]), s, seed)?);
    out.push(check_op("op.index_select", &[5, 2], (-1.0, 1.0), |x| {
        x.index_select(0, &[4, 0, 0, 2])
    }, s, seed)?);
    out.push(check_op("op.narrow", &[5, 3], (-1.0, 1.0), |x| x.narrow(0, 1, 3), s, seed)?);
    out.push(check_op("op.concat", &[2, 3], (-1.0, 1.0), |x| {
        Tensor::concat(&[x, x], 1)
    }, s, seed)?);
    out.push(check_op("op.pad_zero", &[1, 1, 3, 3], (-1.0, 1.0), |x| {
        x.pad2d([1, 2, 0, 1], crate::tensor::PadMode::Zero)
    }, s, seed)?);
    out.push(check_op("op.pad_reflect", &[1, 1, 3, 3], (-1.0, 1.0), |x| {
        x.pad2d([1, 2, 2, 1], crate::tensor::PadMode::Reflect)
    }, s, seed)?);
    {
        let w = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        out.push(check_op("op.matmul", &[2, 2, 3], (-1.0, 1.0), move |x| x.matmul(&w), s, seed)?);
    }
    out.push(check_op("op.softmax", &[2, 4], (-2.0, 2.0), |x| x.softmax(1), s, seed)?);
    {
        let gamma = random_tensor(&mut rng, &[3], 0.5, 1.5);
        let beta = random_tensor(&mut rng, &[3], -0.5, 0.5);
        out.push(check_op("op.layer_norm", &[2, 3, 4], (-1.0, 1.0), move |x| {
            x.layer_norm(1, &gamma, &beta, 1e-5)
        }, s, seed)?);
    }
    {
        let w = random_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
        let b = random_tensor(&mut rng, &[3], -0.2, 0.2);
        out.push(check_op("op.conv2d", &[1, 2, 5, 5], (-1.0, 1.0), move |x| {
            x.conv2d(&w, Some(&b), 1, 1, 1)
        }, s, seed)?);
    }
    {
        let w = random_tensor(&mut rng, &[4, 1, 3, 3], -0.5, 0.5);
        out.push(check_op("op.conv2d_depthwise_stride2", &[1, 4, 6, 6], (-1.0, 1.0), move |x| {
            x.conv2d(&w, None, 2, 1, 4)
        }, s, seed)?);
    }
    out.push(check_op("op.resize_nearest", &[1, 2, 3, 3], (-1.0, 1.0), |x| {
        x.resize_nearest(2.0)
    }, s, seed)?);
    out.push(check_op("op.resize_bilinear_up", &[1, 2, 3, 3], (-1.0, 1.0), |x| {
        x.resize_bilinear(2.0)
    }, s, seed)?);
    out.push(check_op("op.resize_bilinear_down", &[1, 2, 4, 4], (-1.0, 1.0), |x| {
        x.resize_bilinear(0.5)
    }, s, seed)?);
    {
        let spec = WindowSpec::new(2, 2, 3).unwrap();
        out.push(check_op("op.spatial_shuffle", &[1, 6, 2], (-1.0, 1.0), move |x| {
            spatial_shuffle(x, &spec)
        }, s, seed)?);
        out.push(check_op("op.spatial_alignment", &[1, 6, 2], (-1.0, 1.0), move |x| {
            spatial_alignment(x, &spec)
        }, s, seed)?);
    }
    Ok(out)
}

fn ssab_cfg(dim: usize, window: usize, msa: MsaKind) -> SsabConfig {
    SsabConfig {
        dim,
        window,
        spatial_heads: 2,
        spectral_heads: 2,
        ffn_expansion: 2,
        msa,
        safe_init: false,
    }
}

/// One seed's worth of checks for the attention primitives and every
/// composite block, plus the training loss.
pub fn block_checks(seed: u64, settings: &CheckSettings) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);

    // window MSA
    {
        let mut p = AttentionParams::<f64>::new_spatial(&mut rng, 4, 2)?;
        let x = random_tensor(&mut rng, &[1, 4, 4, 4], -1.0, 1.0);
        let w = random_tensor(&mut rng, &[1, 4, 4, 4], -1.0, 1.0);
        let spec = WindowSpec::new(2, 4, 4).unwrap();
        out.push(check_module(
            "attn.window_msa",
            &mut p,
            &[x],
            |p, inputs| window_msa(&inputs[0], p, &spec)?.mul(&w)?.sum_all(),
            settings,
            &mut probe_rng,
        )?);
    }
    // shuffle-window MSA
    {
        struct Bundle {
            p1: AttentionParams<f64>,
            p2: AttentionParams<f64>,
            bridge: DepthwiseBridge<f64>,
        }
        impl ParamSet<f64> for Bundle {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
                self.p1.visit(&crate::params::join(prefix, "p1"), f);
                self.p2.visit(&crate::params::join(prefix, "p2"), f);
                self.bridge.visit(&crate::params::join(prefix, "bridge"), f);
            }
            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
                self.p1.visit_mut(&crate::params::join(prefix, "p1"), f);
                self.p2.visit_mut(&crate::params::join(prefix, "p2"), f);
                self.bridge.visit_mut(&crate::params::join(prefix, "bridge"), f);
            }
        }
        let mut bundle = Bundle {
            p1: AttentionParams::new_spatial(&mut rng, 4, 2)?,
            p2: AttentionParams::new_spatial(&mut rng, 4, 2)?,
            bridge: DepthwiseBridge::new(&mut rng, 4, 2),
        };
        let x = random_tensor(&mut rng, &[1, 4, 4, 4], -1.0, 1.0);
        let w = random_tensor(&mut rng, &[1, 4, 4, 4], -1.0, 1.0);
        let spec = WindowSpec::new(2, 4, 4).unwrap();
        out.push(check_module(
            "attn.shuffle_window_msa",
            &mut bundle,
            &[x],
            |b, inputs| {
                shuffle_window_msa(&inputs[0], &b.p1, &b.p2, &b.bridge, &spec)?
                    .mul(&w)?
                    .sum_all()
            },
            settings,
            &mut probe_rng,
        )?);
    }
    // spectral MSA
    {
        let mut p = AttentionParams::<f64>::new_spectral(&mut rng, 4, 2)?;
        let x = random_tensor(&mut rng, &[1, 4, 3, 3], -1.0, 1.0);
        let w = random_tensor(&mut rng, &[1, 4, 3, 3], -1.0, 1.0);
        out.push(check_module(
            "attn.spectral_msa",
            &mut p,
            &[x],
            |p, inputs| spectral_msa(&inputs[0], p)?.mul(&w)?.sum_all(),
            settings,
            &mut probe_rng,
        )?);
    }
    // SSAB on 1x8x8x8
    {
        let mut ssab = Ssab::<f64>::new(&mut rng, ssab_cfg(8, 4, MsaKind::SpatioSpectral))?;
        let x = random_tensor(&mut rng, &[1, 8, 8, 8], -1.0, 1.0);
        let w = random_tensor(&mut rng, &[1, 8, 8, 8], -1.0, 1.0);
        out.push(check_module(
            "block.ssab",
            &mut ssab,
            &[x],
            |b, inputs| b.forward(&inputs[0])?.mul(&w)?.sum_all(),
            settings,
            &mut probe_rng,
        )?);
    }
    // FEB on 1x1x8x8
    {
        let cfg = FebConfig {
            level_widths: [6, 6, 6],
            blocks_per_level: 1,
        };
        let st = BlockSettings {
            kind: BlockKind::Ssab,
            window: 2,
            spatial_heads: 2,
            spectral_heads: 2,
            ffn_expansion: 2,
            msa: MsaKind::SpatioSpectral,
            safe_init: false,
        };
        let mut feb = Feb::<f64>::new(&mut rng, 1, 31, &cfg, &st)?;
        let x = random_tensor(&mut rng, &[1, 1, 8, 8], 0.0, 1.0);
        let w = random_tensor(&mut rng, &[1, 31, 8, 8], -1.0, 1.0);
        out.push(check_module(
            "block.feb",
            &mut feb,
            &[x],
            |b, inputs| b.forward(&inputs[0])?.mul(&w)?.sum_all(),
            settings,
            &mut probe_rng,
        )?);
    }
    // channel learning on 1x31x8x8
    {
        let mut cl = ChannelLearning::<f64>::new(&mut rng, 31, 1, 2, false)?;
        let e = random_tensor(&mut rng, &[1, 31, 8, 8], 0.0, 1.0);
        let p = random_tensor(&mut rng, &[1, 31, 8, 8], 0.0, 1.0);
        let w = random_tensor(&mut rng, &[1, 31, 8, 8], -1.0, 1.0);
        out.push(check_module(
            "block.channel_learning",
            &mut cl,
            &[e, p],
            |b, inputs| b.forward(&inputs[0], &inputs[1])?.mul(&w)?.sum_all(),
            settings,
            &mut probe_rng,
        )?);
    }
    // SFAM on a 1x31x8x8 triple
    {
        let mut sfam = Sfam::<f64>::new(&mut rng, 31, 1, 2, 8, false, false)?;
        let r = random_tensor(&mut rng, &[1, 31, 8, 8], 0.0, 1.0);
        let g = random_tensor(&mut rng, &[1, 31, 8, 8], 0.0, 1.0);
        let b = random_tensor(&mut rng, &[1, 31, 8, 8], 0.0, 1.0);
        let w = random_tensor(&mut rng, &[1, 31, 8, 8], -1.0, 1.0);
        out.push(check_module(
            "block.sfam",
            &mut sfam,
            &[r, g, b],
            |m, inputs| {
                let triple = FusionTriple::new(
                    inputs[0].clone(),
                    inputs[1].clone(),
                    inputs[2].clone(),
                )?;
                m.forward(&triple)?.mul(&w)?.sum_all()
            },
            settings,
            &mut probe_rng,
        )?);
    }
    // RCAB on 1x8x6x6
    {
        let mut rcab = Rcab::<f64>::new(&mut rng, 8, 8, 8);
        let x = random_tensor(&mut rng, &[1, 8, 6, 6], -1.0, 1.0);
        let w = random_tensor(&mut rng, &[1, 8, 6, 6], -1.0, 1.0);
        out.push(check_module(
            "block.rcab",
            &mut rcab,
            &[x],
            |b, inputs| b.forward(&inputs[0])?.mul(&w)?.sum_all(),
            settings,
            &mut probe_rng,
        )?);
    }
    // SCCM: both outputs feed the loss
    {
        let mut sccm = Sccm::<f64>::new(&mut rng, 8, 31);
        let x = random_tensor(&mut rng, &[1, 8, 8, 8], -1.0, 1.0);
        let wp = random_tensor(&mut rng, &[1, 31, 8, 8], -1.0, 1.0);
        let wg = random_tensor(&mut rng, &[1, 8, 16, 16], -1.0, 1.0);
        out.push(check_module(
            "block.sccm",
            &mut sccm,
            &[x],
            |b, inputs| {
                let o = b.forward(&inputs[0])?;
                o.prediction
                    .mul(&wp)?
                    .sum_all()?
                    .add(&o.guidance.mul(&wg)?.sum_all()?)
            },
            settings,
            &mut probe_rng,
        )?);
    }
    // total loss through SSIM: looser tolerance
    {
        let loss_settings = CheckSettings {
            rel_tol: 1e-3,
            abs_tol: 1e-6,
            ..block_settings()
        };
        let cfg = LossConfig::default();
        let gt = [
            random_tensor(&mut rng, &[1, 2, 8, 8], 0.1, 0.9),
            random_tensor(&mut rng, &[1, 2, 4, 4], 0.1, 0.9),
            random_tensor(&mut rng, &[1, 2, 2, 2], 0.1, 0.9),
        ];
        let x1 = random_tensor(&mut rng, &[1, 2, 8, 8], 0.1, 0.9);
        let x2 = random_tensor(&mut rng, &[1, 2, 4, 4], 0.1, 0.9);
        let x3 = random_tensor(&mut rng, &[1, 2, 2, 2], 0.1, 0.9);
        out.push(check_module(
            "loss.total_with_ssim",
            &mut NoParams,
            &[x1, x2, x3],
            |_, inputs| {
                let pred = MultiScalePrediction {
                    levels: [inputs[0].clone(), inputs[1].clone(), inputs[2].clone()],
                };
                loss_total(&pred, &gt, &cfg)
            },
            &loss_settings,
            &mut probe_rng,
        )?);
    }
    Ok(out)
}

/// Full-model check at the toy configuration.
pub fn model_check(seed: u64, settings: &CheckSettings) -> Result<CheckReport> {
    let cfg = CesstConfig {
        seed,
        safe_init: false,
        ..CesstConfig::default()
    };
    let mut model = Cesst::<f64>::new(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(31337));
    let x = random_tensor(&mut rng, &[1, 3, 32, 32], 0.0, 1.0);
    let gt = [
        random_tensor(&mut rng, &[1, 31, 32, 32], 0.1, 0.9),
        random_tensor(&mut rng, &[1, 31, 16, 16], 0.1, 0.9),
        random_tensor(&mut rng, &[1, 31, 8, 8], 0.1, 0.9),
    ];
    let loss_cfg = LossConfig::default();
    let model_settings = CheckSettings {
        // SSIM participates in the loss path
        rel_tol: 1e-3,
        abs_tol: 1e-6,
        max_coords_per_tensor: 1,
        max_total_probes: Some(settings.max_total_probes.unwrap_or(48)),
        step: 1e-5,
        ..CheckSettings::default()
    };
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    check_module(
        "model.cesst_toy",
        &mut model,
        &[x],
        |m, inputs| {
            let pred = m.forward(&inputs[0])?;
            loss_total(&pred, &gt, &loss_cfg)
        },
        &model_settings,
        &mut probe_rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_gradients_match_finite_differences() {
        // module invariant: 5 seeded random inputs per op
        let settings = CheckSettings::default();
        for seed in 0..5 {
            for report in op_checks(seed, &settings).unwrap() {
                assert!(report.pass, "seed {seed}: {}", report.line());
            }
        }
    }

    #[test]
    fn backward_matches_fd_on_matmul_softmax_composite() {
        // composite 4x4 matmul + softmax pipeline against the oracle
        use crate::tensor::finite_diff_grad;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_tensor(&mut rng, &[4, 4], -1.0, 1.0);
        let x = random_tensor(&mut rng, &[4, 4], -1.0, 1.0);
        let f = {
            let w = w.clone();
            move |x: &Tensor<f64>| x.matmul(&w)?.softmax(1)?.mul(x)?.sum_all()
        };
        let fd = finite_diff_grad(&f, &x, 1e-4).unwrap();
        let tracked = x.clone().with_requires_grad();
        let loss = f(&tracked).unwrap();
        let grads = loss.backward().unwrap();
        let an = grads.get(&tracked).unwrap();
        for (a, d) in an.iter().zip(fd.to_vec()) {
            let rel = (a - d).abs() / a.abs().max(d.abs()).max(1e-3);
            assert!(rel < 1e-4, "{a} vs {d}");
        }
    }
}
