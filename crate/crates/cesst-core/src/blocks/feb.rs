//! Feature extraction block: a small UNet of attention (or baseline conv)
//! blocks mapping one input channel to a 31-band embedding.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Conv2dLayer;
use super::ssab::{MsaKind, ResnetBlock, Ssab, SsabConfig};
use crate::error::{Error, Result};
use crate::params::{join, ParamSet};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Ssab,
    Resnet,
}

/// Per-level block settings shared by encoder, bottleneck, and decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSettings {
    pub kind: BlockKind,
    pub window: usize,
    pub spatial_heads: usize,
    pub spectral_heads: usize,
    pub ffn_expansion: usize,
    pub msa: MsaKind,
    /// Zero-init residual-branch outputs so blocks start as identities.
    pub safe_init: bool,
}

impl BlockSettings {
    pub fn ssab_config(&self, dim: usize) -> SsabConfig {
        SsabConfig {
            dim,
            window: self.window,
            spatial_heads: self.spatial_heads,
            spectral_heads: self.spectral_heads,
            ffn_expansion: self.ffn_expansion,
            msa: self.msa,
            safe_init: self.safe_init,
        }
    }
}

/// UNet widths: encoder levels 1 and 2 plus the bottleneck. Decoder widths
/// mirror the encoder by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FebConfig {
    pub level_widths: [usize; 3],
    pub blocks_per_level: usize,
}

pub enum Block<E: Element> {
    Ssab(Ssab<E>),
    Resnet(ResnetBlock<E>),
}

impl<E: Element> Block<E> {
    fn new(rng: &mut ChaCha8Rng, dim: usize, settings: &BlockSettings) -> Result<Self> {
        Ok(match settings.kind {
            BlockKind::Ssab => Block::Ssab(Ssab::new(rng, settings.ssab_config(dim))?),
            BlockKind::Resnet => Block::Resnet(ResnetBlock::new(rng, dim)),
        })
    }

    fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        match self {
            Block::Ssab(b) => b.forward(x),
            Block::Resnet(b) => b.forward(x),
        }
    }

    fn count(dim: usize, settings: &BlockSettings) -> u64 {
        match settings.kind {
            BlockKind::Ssab => Ssab::<E>::param_count(&settings.ssab_config(dim)),
            BlockKind::Resnet => ResnetBlock::<E>::param_count(dim),
        }
    }
}

impl<E: Element> ParamSet<E> for Block<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        match self {
            Block::Ssab(b) => b.visit(prefix, f),
            Block::Resnet(b) => b.visit(prefix, f),
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        match self {
            Block::Ssab(b) => b.visit_mut(prefix, f),
            Block::Resnet(b) => b.visit_mut(prefix, f),
        }
    }
}

/// Two encoder levels, one bottleneck, two decoder levels with skip
/// connections; spatial size is preserved end to end.
pub struct Feb<E: Element> {
    stem: Conv2dLayer<E>,
    enc1: Vec<Block<E>>,
    down1: Conv2dLayer<E>,
    enc2: Vec<Block<E>>,
    down2: Conv2dLayer<E>,
    bottleneck: Vec<Block<E>>,
    up1: Conv2dLayer<E>,
    skip1: Conv2dLayer<E>,
    dec1: Vec<Block<E>>,
    up2: Conv2dLayer<E>,
    skip2: Conv2dLayer<E>,
    dec2: Vec<Block<E>>,
    head: Conv2dLayer<E>,
    in_channels: usize,
}

impl<E: Element> Feb<E> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        out_channels: usize,
        cfg: &FebConfig,
        settings: &BlockSettings,
    ) -> Result<Self> {
        if cfg.blocks_per_level == 0 {
            return Err(Error::Config("blocks_per_level must be >= 1".into()));
        }
        let [w1, w2, w3] = cfg.level_widths;
        let level = |rng: &mut ChaCha8Rng, dim: usize| -> Result<Vec<Block<E>>> {
            (0..cfg.blocks_per_level)
                .map(|_| Block::new(rng, dim, settings))
                .collect()
        };
        Ok(Feb {
            stem: Conv2dLayer::new(rng, in_channels, w1, 3, 1, 1, 1),
            enc1: level(rng, w1)?,
            down1: Conv2dLayer::new(rng, w1, w2, 3, 2, 1, 1),
            enc2: level(rng, w2)?,
            down2: Conv2dLayer::new(rng, w2, w3, 3, 2, 1, 1),
            bottleneck: level(rng, w3)?,
            up1: Conv2dLayer::new(rng, w3, w2, 3, 1, 1, 1),
            skip1: Conv2dLayer::new(rng, 2 * w2, w2, 1, 1, 0, 1),
            dec1: level(rng, w2)?,
            up2: Conv2dLayer::new(rng, w2, w1, 3, 1, 1, 1),
            skip2: Conv2dLayer::new(rng, 2 * w1, w1, 1, 1, 0, 1),
            dec2: level(rng, w1)?,
            head: Conv2dLayer::new(rng, w1, out_channels, 3, 1, 1, 1),
            in_channels,
        })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let d = x.dims();
        if d.len() != 4 || d[1] != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "feb",
                lhs: x.shape().to_string(),
                rhs: format!("[B, {}, H, W]", self.in_channels),
            });
        }
        if d[2] % 4 != 0 || d[3] % 4 != 0 {
            return Err(Error::InvalidArg {
                op: "feb",
                msg: format!("H and W must be multiples of 4 for two downsamplings, got {}x{}", d[2], d[3]),
            });
        }
        let run = |blocks: &[Block<E>], mut t: Tensor<E>| -> Result<Tensor<E>> {
            for b in blocks {
                t = b.forward(&t)?;
            }
            Ok(t)
        };
        let e1 = run(&self.enc1, self.stem.forward(x)?)?;
        let e2 = run(&self.enc2, self.down1.forward(&e1)?)?;
        let mut t = run(&self.bottleneck, self.down2.forward(&e2)?)?;
        t = self.up1.forward(&t.resize_nearest(2.0)?)?;
        t = run(&self.dec1, self.skip1.forward(&Tensor::concat(&[&t, &e2], 1)?)?)?;
        t = self.up2.forward(&t.resize_nearest(2.0)?)?;
        t = run(&self.dec2, self.skip2.forward(&Tensor::concat(&[&t, &e1], 1)?)?)?;
        self.head.forward(&t)
    }

    pub fn param_count(
        in_channels: usize,
        out_channels: usize,
        cfg: &FebConfig,
        settings: &BlockSettings,
    ) -> u64 {
        let [w1, w2, w3] = cfg.level_widths;
        let n_blocks = cfg.blocks_per_level as u64;
        let mut n = Conv2dLayer::<E>::param_count(in_channels, w1, 3, 1);
        n += n_blocks * Block::<E>::count(w1, settings);
        n += Conv2dLayer::<E>::param_count(w1, w2, 3, 1);
        n += n_blocks * Block::<E>::count(w2, settings);
        n += Conv2dLayer::<E>::param_count(w2, w3, 3, 1);
        n += n_blocks * Block::<E>::count(w3, settings);
        n += Conv2dLayer::<E>::param_count(w3, w2, 3, 1);
        n += Conv2dLayer::<E>::param_count(2 * w2, w2, 1, 1);
        n += n_blocks * Block::<E>::count(w2, settings);
        n += Conv2dLayer::<E>::param_count(w2, w1, 3, 1);
        n += Conv2dLayer::<E>::param_count(2 * w1, w1, 1, 1);
        n += n_blocks * Block::<E>::count(w1, settings);
        n += Conv2dLayer::<E>::param_count(w1, out_channels, 3, 1);
        n
    }
}

impl<E: Element> ParamSet<E> for Feb<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        visit_level(&self.enc1, &join(prefix, "enc1"), f);
        self.down1.visit(&join(prefix, "down1"), f);
        visit_level(&self.enc2, &join(prefix, "enc2"), f);
        self.down2.visit(&join(prefix, "down2"), f);
        visit_level(&self.bottleneck, &join(prefix, "bottleneck"), f);
        self.up1.visit(&join(prefix, "up1"), f);
        self.skip1.visit(&join(prefix, "skip1"), f);
        visit_level(&self.dec1, &join(prefix, "dec1"), f);
        self.up2.visit(&join(prefix, "up2"), f);
        self.skip2.visit(&join(prefix, "skip2"), f);
        visit_level(&self.dec2, &join(prefix, "dec2"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        visit_level_mut(&mut self.enc1, &join(prefix, "enc1"), f);
        self.down1.visit_mut(&join(prefix, "down1"), f);
        visit_level_mut(&mut self.enc2, &join(prefix, "enc2"), f);
        self.down2.visit_mut(&join(prefix, "down2"), f);
        visit_level_mut(&mut self.bottleneck, &join(prefix, "bottleneck"), f);
        self.up1.visit_mut(&join(prefix, "up1"), f);
        self.skip1.visit_mut(&join(prefix, "skip1"), f);
        visit_level_mut(&mut self.dec1, &join(prefix, "dec1"), f);
        self.up2.visit_mut(&join(prefix, "up2"), f);
        self.skip2.visit_mut(&join(prefix, "skip2"), f);
        visit_level_mut(&mut self.dec2, &join(prefix, "dec2"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

fn visit_level<E: Element>(
    blocks: &[Block<E>],
    prefix: &str,
    f: &mut dyn FnMut(&str, &Tensor<E>),
) {
    for (i, b) in blocks.iter().enumerate() {
        b.visit(&format!("{prefix}.ssab{i}"), f);
    }
}

fn visit_level_mut<E: Element>(
    blocks: &mut [Block<E>],
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut Tensor<E>),
) {
    for (i, b) in blocks.iter_mut().enumerate() {
        b.visit_mut(&format!("{prefix}.ssab{i}"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::param_count;
    use rand::SeedableRng;

    fn settings() -> BlockSettings {
        BlockSettings {
            kind: BlockKind::Ssab,
            window: 4,
            spatial_heads: 2,
            spectral_heads: 2,
            ffn_expansion: 2,
            msa: MsaKind::SpatioSpectral,
            safe_init: false,
        }
    }

    fn feb_cfg() -> FebConfig {
        FebConfig {
            level_widths: [8, 8, 8],
            blocks_per_level: 1,
        }
    }

    #[test]
    fn spatial_size_and_band_count_are_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let feb = Feb::<f32>::new(&mut rng, 1, 31, &feb_cfg(), &settings()).unwrap();
        let x = Tensor::<f32>::full(&[1, 1, 32, 32], 0.3).unwrap();
        let y = feb.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 31, 32, 32]);
    }

    #[test]
    fn always_outputs_31_bands_regardless_of_widths() {
        for widths in [[4, 8, 8], [8, 4, 12]] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let cfg = FebConfig {
                level_widths: widths,
                blocks_per_level: 1,
            };
            let feb = Feb::<f32>::new(&mut rng, 1, 31, &cfg, &settings()).unwrap();
            let y = feb.forward(&Tensor::full(&[1, 1, 16, 16], 0.1).unwrap()).unwrap();
            assert_eq!(y.dims()[1], 31);
        }
    }

    #[test]
    fn census_matches_actual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = feb_cfg();
        let s = settings();
        let feb = Feb::<f32>::new(&mut rng, 1, 31, &cfg, &s).unwrap();
        assert_eq!(param_count(&feb), Feb::<f32>::param_count(1, 31, &cfg, &s));
    }

    #[test]
    fn rejects_sizes_not_divisible_by_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feb = Feb::<f32>::new(&mut rng, 1, 31, &feb_cfg(), &settings()).unwrap();
        assert!(feb.forward(&Tensor::full(&[1, 1, 10, 12], 0.1).unwrap()).is_err());
    }

    #[test]
    fn gradients_reach_the_stem() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feb = Feb::<f64>::new(&mut rng, 1, 31, &feb_cfg(), &settings()).unwrap();
        let x = Tensor::<f64>::full(&[1, 1, 8, 8], 0.4).unwrap();
        let y = feb.forward(&x).unwrap();
        let loss = y.mul(&y).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let g = grads.get(&feb.stem.weight).expect("stem weight gradient");
        let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 0.0, "stem gradient norm is zero");
    }
}
