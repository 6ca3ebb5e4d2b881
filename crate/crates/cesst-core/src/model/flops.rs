//! Analytic multiply-accumulate census for a configured model at a given
//! input size. Convolutions and attention matmuls only; elementwise work and
//! normalizations are excluded.

use super::{CesstConfig, FusionKind, SCALES};
use crate::attention::{count_flops, MsaVariant};
use crate::blocks::{BlockKind, BlockSettings, MsaKind};

fn conv_macs(cin: usize, cout: usize, k: usize, groups: usize, h: usize, w: usize) -> u64 {
    (cout * (cin / groups) * k * k) as u64 * (h * w) as u64
}

fn pad_to(v: usize, m: usize) -> usize {
    v + (m - v % m) % m
}

fn ssab_macs(c: usize, h: usize, w: usize, s: &BlockSettings) -> u64 {
    let (hp, wp) = (pad_to(h, s.window), pad_to(w, s.window));
    let mut total = 0u64;
    let mut branches = 0usize;
    if s.msa.has_spatial() {
        branches += 1;
        total += match s.msa {
            MsaKind::SpatialOnly => {
                count_flops(MsaVariant::Global, c, hp, wp, s.window, s.spatial_heads).total()
            }
            MsaKind::ShiftedWindow => {
                2 * count_flops(MsaVariant::Window, c, hp, wp, s.window, s.spatial_heads).total()
            }
            _ => count_flops(MsaVariant::ShuffleWindow, c, hp, wp, s.window, s.spatial_heads)
                .total(),
        };
    }
    if s.msa.has_spectral() {
        branches += 1;
        total += count_flops(MsaVariant::Spectral, c, hp, wp, s.window, s.spectral_heads).total();
    }
    total += conv_macs(c * branches, c, 1, 1, hp, wp);
    let hidden = c * s.ffn_expansion.max(1);
    total += conv_macs(c, hidden, 1, 1, hp, wp) + conv_macs(hidden, c, 1, 1, hp, wp);
    total
}

fn block_macs(c: usize, h: usize, w: usize, s: &BlockSettings) -> u64 {
    match s.kind {
        BlockKind::Ssab => ssab_macs(c, h, w, s),
        BlockKind::Resnet => 2 * conv_macs(c, c, 3, 1, h, w),
    }
}

fn feb_macs(cin: usize, bands: usize, cfg: &CesstConfig, h: usize, w: usize) -> u64 {
    let s = cfg.block_settings();
    let [w1, w2, w3] = cfg.feb.level_widths;
    let n = cfg.feb.blocks_per_level as u64;
    let (h2, w2d) = (h / 2, w / 2);
    let (h4, w4) = (h / 4, w / 4);
    let mut total = conv_macs(cin, w1, 3, 1, h, w);
    total += n * block_macs(w1, h, w, &s);
    total += conv_macs(w1, w2, 3, 1, h2, w2d);
    total += n * block_macs(w2, h2, w2d, &s);
    total += conv_macs(w2, w3, 3, 1, h4, w4);
    total += n * block_macs(w3, h4, w4, &s);
    total += conv_macs(w3, w2, 3, 1, h2, w2d) + conv_macs(2 * w2, w2, 1, 1, h2, w2d);
    total += n * block_macs(w2, h2, w2d, &s);
    total += conv_macs(w2, w1, 3, 1, h, w) + conv_macs(2 * w1, w1, 1, 1, h, w);
    total += n * block_macs(w1, h, w, &s);
    total += conv_macs(w1, bands, 3, 1, h, w);
    total
}

fn channel_learning_macs(c: usize, heads: usize, expansion: usize, h: usize, w: usize) -> u64 {
    let attn = count_flops(MsaVariant::Spectral, c, h, w, 1, heads).total();
    let hidden = c * expansion.max(1);
    attn + conv_macs(c, hidden, 1, 1, h, w) + conv_macs(hidden, c, 1, 1, h, w)
}

fn rcab_macs(cin: usize, cout: usize, reduction: usize, h: usize, w: usize) -> u64 {
    let mid = (cout / reduction.max(1)).max(1);
    conv_macs(cin, cout, 3, 1, h, w)
        + conv_macs(cout, cout, 3, 1, h, w)
        + conv_macs(cout, mid, 1, 1, h + w, 1)
        + 2 * conv_macs(mid, cout, 1, 1, (h + w) / 2 + 1, 1)
        + if cin != cout {
            conv_macs(cin, cout, 1, 1, h, w)
        } else {
            0
        }
}

fn fusion_macs(cfg: &CesstConfig, h: usize, w: usize) -> u64 {
    let bands = cfg.bands;
    match cfg.fusion {
        FusionKind::Sfam => {
            6 * channel_learning_macs(bands, cfg.fusion_heads, cfg.ffn_expansion, h, w)
                + 3 * conv_macs(2 * bands, bands, 3, 1, h, w)
                + rcab_macs(3 * bands, bands, cfg.rcab_reduction, h, w)
        }
        FusionKind::ConcatConv => {
            let cin = bands * if cfg.independent_modeling { 3 } else { 1 };
            conv_macs(cin, bands, 3, 1, h, w)
        }
    }
}

/// Analytic forward MACs for one image of `h x w` at the given config.
pub fn model_flops(cfg: &CesstConfig, h: usize, w: usize) -> u64 {
    let bands = cfg.bands;
    let mut total = 0u64;
    for s in 0..SCALES {
        let (hs, ws) = (h >> s, w >> s);
        let feb = if cfg.independent_modeling {
            3 * feb_macs(1, bands, cfg, hs, ws)
        } else {
            feb_macs(3, bands, cfg, hs, ws)
        };
        total += feb + fusion_macs(cfg, hs, ws);
        if s > 0 {
            // spectrum-consistency head and gate
            total += conv_macs(bands, bands, 3, 1, hs, ws) + conv_macs(bands, bands, 1, 1, hs, ws);
        }
    }
    total + conv_macs(3, bands, 1, 1, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_variant;

    #[test]
    fn flops_scale_roughly_linearly_with_area() {
        let cfg = CesstConfig::default();
        let small = model_flops(&cfg, 32, 32);
        let large = model_flops(&cfg, 64, 64);
        let ratio = large as f64 / small as f64;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn baseline_variant_is_cheaper_than_full() {
        let base = make_variant(&CesstConfig::default(), "baseline").unwrap();
        let full = make_variant(&CesstConfig::default(), "full").unwrap();
        assert!(model_flops(&base, 32, 32) < model_flops(&full, 32, 32));
    }
}
