//! Spatio-spectral attention block and the baseline residual conv block.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{ChannelNorm, Conv2dLayer, FeedForward};
use crate::attention::{
    global_msa_traced, shifted_window_msa, shuffle_window_msa_traced, spectral_msa_traced,
    AttentionParams, DepthwiseBridge, MsaTrace, WindowSpec,
};
use crate::error::{Error, Result};
use crate::params::{join, ParamSet};
use crate::tensor::{Element, PadMode, Tensor};

/// Which attention paths the block runs; rows of the MSA ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsaKind {
    SpatioSpectral,
    SpatialOnly,
    SpectralOnly,
    ShuffleOnly,
    ShiftedWindow,
}

impl MsaKind {
    pub fn has_spectral(self) -> bool {
        matches!(self, MsaKind::SpatioSpectral | MsaKind::SpectralOnly)
    }

    pub fn has_spatial(self) -> bool {
        !matches!(self, MsaKind::SpectralOnly)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsabConfig {
    pub dim: usize,
    pub window: usize,
    pub spatial_heads: usize,
    pub spectral_heads: usize,
    pub ffn_expansion: usize,
    pub msa: MsaKind,
    pub safe_init: bool,
}

impl SsabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.msa.has_spatial() && self.dim % self.spatial_heads != 0 {
            return Err(Error::Config(format!(
                "spatial heads {} must divide dim {}",
                self.spatial_heads, self.dim
            )));
        }
        if self.msa.has_spectral() && self.dim % self.spectral_heads != 0 {
            return Err(Error::Config(format!(
                "spectral heads {} must divide dim {}",
                self.spectral_heads, self.dim
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("window size must be >= 1".into()));
        }
        Ok(())
    }
}

enum SpatialBranch<E: Element> {
    ShuffleWindow {
        first: AttentionParams<E>,
        second: AttentionParams<E>,
        bridge: DepthwiseBridge<E>,
    },
    Global(AttentionParams<E>),
    Shifted {
        first: AttentionParams<E>,
        second: AttentionParams<E>,
    },
}

/// Residual transformer block with parallel spatial and spectral attention
/// branches fused by concat + pointwise conv, followed by a residual
/// feed-forward path.
pub struct Ssab<E: Element> {
    cfg: SsabConfig,
    norm_spatial: Option<ChannelNorm<E>>,
    spatial: Option<SpatialBranch<E>>,
    norm_spectral: Option<ChannelNorm<E>>,
    spectral: Option<AttentionParams<E>>,
    fuse: Conv2dLayer<E>,
    ffn: FeedForward<E>,
}

impl<E: Element> Ssab<E> {
    pub fn new(rng: &mut ChaCha8Rng, cfg: SsabConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.dim;
        let attn = |rng: &mut ChaCha8Rng, heads: usize| -> Result<AttentionParams<E>> {
            let mut p = AttentionParams::new_spatial(rng, c, heads)?;
            if cfg.safe_init {
                p.zero_output_proj();
            }
            Ok(p)
        };
        let spatial = if cfg.msa.has_spatial() {
            Some(match cfg.msa {
                MsaKind::SpatialOnly => SpatialBranch::Global(attn(rng, cfg.spatial_heads)?),
                MsaKind::ShiftedWindow => SpatialBranch::Shifted {
                    first: attn(rng, cfg.spatial_heads)?,
                    second: attn(rng, cfg.spatial_heads)?,
                },
                _ => SpatialBranch::ShuffleWindow {
                    first: attn(rng, cfg.spatial_heads)?,
                    second: attn(rng, cfg.spatial_heads)?,
                    bridge: DepthwiseBridge::new(rng, c, cfg.window),
                },
            })
        } else {
            None
        };
        let spectral = if cfg.msa.has_spectral() {
            let mut p = AttentionParams::new_spectral(rng, c, cfg.spectral_heads)?;
            if cfg.safe_init {
                p.zero_output_proj();
            }
            Some(p)
        } else {
            None
        };
        let branches = spatial.is_some() as usize + spectral.is_some() as usize;
        let mut ffn = FeedForward::new(rng, c, cfg.ffn_expansion);
        if cfg.safe_init {
            ffn.zero_contract();
        }
        Ok(Ssab {
            norm_spatial: spatial.as_ref().map(|_| ChannelNorm::new(c)),
            norm_spectral: spectral.as_ref().map(|_| ChannelNorm::new(c)),
            spatial,
            spectral,
            fuse: Conv2dLayer::new(rng, c * branches, c, 1, 1, 0, 1),
            ffn,
            cfg,
        })
    }

    pub fn config(&self) -> &SsabConfig {
        &self.cfg
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self.forward_traced(x)?.output)
    }

    /// Forward pass that also surfaces every attention matrix produced.
    pub fn forward_traced(&self, x: &Tensor<E>) -> Result<MsaTrace<E>> {
        let d = x.dims();
        if d.len() != 4 || d[1] != self.cfg.dim {
            return Err(Error::ShapeMismatch {
                op: "ssab",
                lhs: x.shape().to_string(),
                rhs: format!("[B, {}, H, W]", self.cfg.dim),
            });
        }
        let (h, w) = (d[2], d[3]);
        let m = self.cfg.window;
        // reflection-pad up to window multiples (split across both sides so
        // small maps stay within the reflect limit), crop after the block
        let pad_h = (m - h % m) % m;
        let pad_w = (m - w % m) % m;
        let (top, left) = (pad_h / 2, pad_w / 2);
        let padded = if pad_h > 0 || pad_w > 0 {
            x.pad2d([top, pad_h - top, left, pad_w - left], PadMode::Reflect)?
        } else {
            x.clone()
        };
        let spec = WindowSpec::new(m, h + pad_h, w + pad_w)?;

        let mut attentions = Vec::new();
        let mut branch_outputs: Vec<Tensor<E>> = Vec::new();
        if let (Some(norm), Some(branch)) = (&self.norm_spatial, &self.spatial) {
            let normed = norm.forward(&padded)?;
            let out = match branch {
                SpatialBranch::ShuffleWindow {
                    first,
                    second,
                    bridge,
                } => {
                    let trace = shuffle_window_msa_traced(&normed, first, second, bridge, &spec)?;
                    attentions.extend(trace.attentions);
                    trace.output
                }
                SpatialBranch::Global(p) => {
                    let trace = global_msa_traced(&normed, p)?;
                    attentions.extend(trace.attentions);
                    trace.output
                }
                SpatialBranch::Shifted { first, second } => {
                    shifted_window_msa(&normed, first, second, &spec)?
                }
            };
            branch_outputs.push(out);
        }
        if let (Some(norm), Some(p)) = (&self.norm_spectral, &self.spectral) {
            let normed = norm.forward(&padded)?;
            let trace = spectral_msa_traced(&normed, &normed, p)?;
            attentions.extend(trace.attentions);
            branch_outputs.push(trace.output);
        }

        let fused_in = match branch_outputs.len() {
            1 => branch_outputs.pop().unwrap(),
            2 => Tensor::concat(&[&branch_outputs[0], &branch_outputs[1]], 1)?,
            _ => unreachable!("ssab always has at least one branch"),
        };
        let fused = self.fuse.forward(&fused_in)?;
        let refined = self.ffn.forward(&fused)?;
        let full = padded.add(&refined)?;
        let output = if pad_h > 0 || pad_w > 0 {
            full.narrow(2, top, h)?.narrow(3, left, w)?
        } else {
            full
        };
        Ok(MsaTrace {
            output,
            attentions,
        })
    }

    pub fn param_count(cfg: &SsabConfig) -> u64 {
        let c = cfg.dim;
        let attn = |spectral: bool, heads: usize| -> u64 {
            (4 * c * c + 4 * c) as u64 + if spectral { heads as u64 } else { 0 }
        };
        let mut n = 0u64;
        let mut branches = 0usize;
        if cfg.msa.has_spatial() {
            branches += 1;
            n += ChannelNorm::<E>::param_count(c);
            n += match cfg.msa {
                MsaKind::SpatialOnly => attn(false, cfg.spatial_heads),
                MsaKind::ShiftedWindow => 2 * attn(false, cfg.spatial_heads),
                _ => {
                    2 * attn(false, cfg.spatial_heads)
                        + Conv2dLayer::<E>::param_count(c, c, cfg.window, c)
                }
            };
        }
        if cfg.msa.has_spectral() {
            branches += 1;
            n += ChannelNorm::<E>::param_count(c) + attn(true, cfg.spectral_heads);
        }
        n += Conv2dLayer::<E>::param_count(c * branches, c, 1, 1);
        n += FeedForward::<E>::param_count(c, cfg.ffn_expansion);
        n
    }
}

impl<E: Element> ParamSet<E> for Ssab<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        if let Some(n) = &self.norm_spatial {
            n.visit(&join(prefix, "spatial.norm"), f);
        }
        match &self.spatial {
            Some(SpatialBranch::ShuffleWindow { first, second, bridge }) => {
                first.visit(&join(prefix, "spatial.wmsa1"), f);
                second.visit(&join(prefix, "spatial.wmsa2"), f);
                bridge.visit(&join(prefix, "spatial.bridge"), f);
            }
            Some(SpatialBranch::Global(p)) => p.visit(&join(prefix, "spatial.global"), f),
            Some(SpatialBranch::Shifted { first, second }) => {
                first.visit(&join(prefix, "spatial.swin1"), f);
                second.visit(&join(prefix, "spatial.swin2"), f);
            }
            None => {}
        }
        if let Some(n) = &self.norm_spectral {
            n.visit(&join(prefix, "spectral.norm"), f);
        }
        if let Some(p) = &self.spectral {
            p.visit(&join(prefix, "spectral.attn"), f);
        }
        self.fuse.visit(&join(prefix, "fuse"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        if let Some(n) = &mut self.norm_spatial {
            n.visit_mut(&join(prefix, "spatial.norm"), f);
        }
        match &mut self.spatial {
            Some(SpatialBranch::ShuffleWindow { first, second, bridge }) => {
                first.visit_mut(&join(prefix, "spatial.wmsa1"), f);
                second.visit_mut(&join(prefix, "spatial.wmsa2"), f);
                bridge.visit_mut(&join(prefix, "spatial.bridge"), f);
            }
            Some(SpatialBranch::Global(p)) => p.visit_mut(&join(prefix, "spatial.global"), f),
            Some(SpatialBranch::Shifted { first, second }) => {
                first.visit_mut(&join(prefix, "spatial.swin1"), f);
                second.visit_mut(&join(prefix, "spatial.swin2"), f);
            }
            None => {}
        }
        if let Some(n) = &mut self.norm_spectral {
            n.visit_mut(&join(prefix, "spectral.norm"), f);
        }
        if let Some(p) = &mut self.spectral {
            p.visit_mut(&join(prefix, "spectral.attn"), f);
        }
        self.fuse.visit_mut(&join(prefix, "fuse"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
    }
}

/// Baseline residual block for the break-down ablation: two 3x3 convs with a
/// ReLU between and an identity skip.
pub struct ResnetBlock<E: Element> {
    conv1: Conv2dLayer<E>,
    conv2: Conv2dLayer<E>,
}

impl<E: Element> ResnetBlock<E> {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize) -> Self {
        ResnetBlock {
            conv1: Conv2dLayer::new(rng, channels, channels, 3, 1, 1, 1),
            conv2: Conv2dLayer::new(rng, channels, channels, 3, 1, 1, 1),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let t = self.conv2.forward(&self.conv1.forward(x)?.relu()?)?;
        x.add(&t)
    }

    pub fn param_count(channels: usize) -> u64 {
        2 * Conv2dLayer::<E>::param_count(channels, channels, 3, 1)
    }
}

impl<E: Element> ParamSet<E> for ResnetBlock<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{param_count, zero_all};
    use rand::SeedableRng;

    fn cfg(dim: usize, msa: MsaKind) -> SsabConfig {
        SsabConfig {
            dim,
            window: 4,
            spatial_heads: 2,
            spectral_heads: 2,
            ffn_expansion: 2,
            msa,
            safe_init: false,
        }
    }

    fn random_input(seed: u64, dims: &[usize]) -> Tensor<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = dims.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
        Tensor::from_vec(data, dims).unwrap()
    }

    #[test]
    fn zero_weights_make_pure_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ssab = Ssab::<f64>::new(&mut rng, cfg(8, MsaKind::SpatioSpectral)).unwrap();
        zero_all(&mut ssab);
        let x = random_input(1, &[1, 8, 8, 8]);
        let y = ssab.forward(&x).unwrap();
        assert_eq!(x.to_vec(), y.to_vec());
    }

    #[test]
    fn shape_contract_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ssab = Ssab::<f64>::new(&mut rng, cfg(16, MsaKind::SpatioSpectral)).unwrap();
        let x = random_input(3, &[2, 16, 16, 16]);
        let y = ssab.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 16, 16, 16]);
    }

    #[test]
    fn nondividing_input_is_padded_and_cropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ssab = Ssab::<f64>::new(&mut rng, cfg(8, MsaKind::SpatioSpectral)).unwrap();
        let x = random_input(5, &[1, 8, 6, 6]);
        let y = ssab.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 8, 6, 6]);
    }

    #[test]
    fn census_matches_actual_for_all_kinds() {
        for msa in [
            MsaKind::SpatioSpectral,
            MsaKind::SpatialOnly,
            MsaKind::SpectralOnly,
            MsaKind::ShuffleOnly,
            MsaKind::ShiftedWindow,
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let c = cfg(8, msa);
            let ssab = Ssab::<f64>::new(&mut rng, c).unwrap();
            assert_eq!(param_count(&ssab), Ssab::<f64>::param_count(&c), "{msa:?}");
        }
    }

    #[test]
    fn resnet_block_zeroed_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut block = ResnetBlock::<f64>::new(&mut rng, 4);
        zero_all(&mut block);
        let x = random_input(9, &[1, 4, 5, 5]);
        assert_eq!(block.forward(&x).unwrap().to_vec(), x.to_vec());
    }
}
