//! Channel learning and the spectrum-fusion attention module.

use rand_chacha::ChaCha8Rng;

use super::layers::{ChannelNorm, Conv2dLayer, FeedForward};
use super::rcab::Rcab;
use crate::attention::{spectral_msa_qkv_traced, AttentionParams};
use crate::error::{Error, Result};
use crate::params::{join, ParamSet};
use crate::tensor::{Element, Tensor};

/// The three per-channel embeddings entering fusion.
pub struct FusionTriple<E: Element> {
    pub r: Tensor<E>,
    pub g: Tensor<E>,
    pub b: Tensor<E>,
}

impl<E: Element> FusionTriple<E> {
    pub fn new(r: Tensor<E>, g: Tensor<E>, b: Tensor<E>) -> Result<Self> {
        if r.dims() != g.dims() || r.dims() != b.dims() {
            return Err(Error::ShapeMismatch {
                op: "fusion_triple",
                lhs: r.shape().to_string(),
                rhs: format!("{} / {}", g.shape(), b.shape()),
            });
        }
        Ok(FusionTriple { r, g, b })
    }
}

/// One cross-channel branch: spectral cross-attention from a partner
/// embedding into the enrichee, with layer norms, a residual onto the
/// enrichee, and a residual feed-forward.
///
/// Queries come from the enrichee and keys/values from the partner;
/// `swap_query_source` flips which side feeds the queries (values stay with
/// the partner either way).
pub struct ChannelLearning<E: Element> {
    norm_enrichee: ChannelNorm<E>,
    norm_partner: ChannelNorm<E>,
    attn: AttentionParams<E>,
    ffn: FeedForward<E>,
    swap_query_source: bool,
}

impl<E: Element> ChannelLearning<E> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        channels: usize,
        heads: usize,
        ffn_expansion: usize,
        swap_query_source: bool,
    ) -> Result<Self> {
        Self::with_init(rng, channels, heads, ffn_expansion, swap_query_source, false)
    }

    pub fn with_init(
        rng: &mut ChaCha8Rng,
        channels: usize,
        heads: usize,
        ffn_expansion: usize,
        swap_query_source: bool,
        safe_init: bool,
    ) -> Result<Self> {
        let mut attn = AttentionParams::new_spectral(rng, channels, heads)?;
        let mut ffn = FeedForward::new(rng, channels, ffn_expansion);
        if safe_init {
            attn.zero_output_proj();
            ffn.zero_contract();
        }
        Ok(ChannelLearning {
            norm_enrichee: ChannelNorm::new(channels),
            norm_partner: ChannelNorm::new(channels),
            attn,
            ffn,
            swap_query_source,
        })
    }

    pub fn forward(&self, enrichee: &Tensor<E>, partner: &Tensor<E>) -> Result<Tensor<E>> {
        if enrichee.dims() != partner.dims() {
            return Err(Error::ShapeMismatch {
                op: "channel_learning",
                lhs: enrichee.shape().to_string(),
                rhs: partner.shape().to_string(),
            });
        }
        let e = self.norm_enrichee.forward(enrichee)?;
        let p = self.norm_partner.forward(partner)?;
        let attn_out = if self.swap_query_source {
            spectral_msa_qkv_traced(&p, &e, &p, &self.attn)?
        } else {
            spectral_msa_qkv_traced(&e, &p, &p, &self.attn)?
        }
        .output;
        let fused = enrichee.add(&attn_out)?;
        self.ffn.forward(&fused)
    }

    pub fn param_count(channels: usize, heads: usize, ffn_expansion: usize) -> u64 {
        2 * ChannelNorm::<E>::param_count(channels)
            + (4 * channels * channels + 4 * channels + heads) as u64
            + FeedForward::<E>::param_count(channels, ffn_expansion)
    }
}

impl<E: Element> ParamSet<E> for ChannelLearning<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.norm_enrichee.visit(&join(prefix, "norm_enrichee"), f);
        self.norm_partner.visit(&join(prefix, "norm_partner"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.norm_enrichee.visit_mut(&join(prefix, "norm_enrichee"), f);
        self.norm_partner.visit_mut(&join(prefix, "norm_partner"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
    }
}

/// Spectrum fusion: six channel-learning branches — one per ordered pair of
/// R/G/B embeddings — reduced per channel by 3x3 convs and fused through a
/// residual coordinate-attention block into the final 31-band map.
pub struct Sfam<E: Element> {
    branch_rg: ChannelLearning<E>,
    branch_rb: ChannelLearning<E>,
    branch_gr: ChannelLearning<E>,
    branch_gb: ChannelLearning<E>,
    branch_br: ChannelLearning<E>,
    branch_bg: ChannelLearning<E>,
    reduce_r: Conv2dLayer<E>,
    reduce_g: Conv2dLayer<E>,
    reduce_b: Conv2dLayer<E>,
    rcab: Rcab<E>,
}

pub const SFAM_BRANCHES: usize = 6;

impl<E: Element> Sfam<E> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        channels: usize,
        heads: usize,
        ffn_expansion: usize,
        rcab_reduction: usize,
        swap_query_source: bool,
        safe_init: bool,
    ) -> Result<Self> {
        let mut branch = || {
            ChannelLearning::with_init(rng, channels, heads, ffn_expansion, swap_query_source, safe_init)
        };
        let branch_rg = branch()?;
        let branch_rb = branch()?;
        let branch_gr = branch()?;
        let branch_gb = branch()?;
        let branch_br = branch()?;
        let branch_bg = branch()?;
        Ok(Sfam {
            branch_rg,
            branch_rb,
            branch_gr,
            branch_gb,
            branch_br,
            branch_bg,
            reduce_r: Conv2dLayer::new(rng, 2 * channels, channels, 3, 1, 1, 1),
            reduce_g: Conv2dLayer::new(rng, 2 * channels, channels, 3, 1, 1, 1),
            reduce_b: Conv2dLayer::new(rng, 2 * channels, channels, 3, 1, 1, 1),
            rcab: Rcab::new(rng, 3 * channels, channels, rcab_reduction),
        })
    }

    pub fn forward(&self, t: &FusionTriple<E>) -> Result<Tensor<E>> {
        let f_rg = self.branch_rg.forward(&t.r, &t.g)?;
        let f_rb = self.branch_rb.forward(&t.r, &t.b)?;
        let f_gr = self.branch_gr.forward(&t.g, &t.r)?;
        let f_gb = self.branch_gb.forward(&t.g, &t.b)?;
        let f_br = self.branch_br.forward(&t.b, &t.r)?;
        let f_bg = self.branch_bg.forward(&t.b, &t.g)?;
        let cal_r = self.reduce_r.forward(&Tensor::concat(&[&f_rg, &f_rb], 1)?)?;
        let cal_g = self.reduce_g.forward(&Tensor::concat(&[&f_gr, &f_gb], 1)?)?;
        let cal_b = self.reduce_b.forward(&Tensor::concat(&[&f_br, &f_bg], 1)?)?;
        self.rcab
            .forward(&Tensor::concat(&[&cal_r, &cal_g, &cal_b], 1)?)
    }

    pub fn param_count(
        channels: usize,
        heads: usize,
        ffn_expansion: usize,
        rcab_reduction: usize,
    ) -> u64 {
        SFAM_BRANCHES as u64 * ChannelLearning::<E>::param_count(channels, heads, ffn_expansion)
            + 3 * Conv2dLayer::<E>::param_count(2 * channels, channels, 3, 1)
            + Rcab::<E>::param_count(3 * channels, channels, rcab_reduction)
    }
}

impl<E: Element> ParamSet<E> for Sfam<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.branch_rg.visit(&join(prefix, "branchRG"), f);
        self.branch_rb.visit(&join(prefix, "branchRB"), f);
        self.branch_gr.visit(&join(prefix, "branchGR"), f);
        self.branch_gb.visit(&join(prefix, "branchGB"), f);
        self.branch_br.visit(&join(prefix, "branchBR"), f);
        self.branch_bg.visit(&join(prefix, "branchBG"), f);
        self.reduce_r.visit(&join(prefix, "reduceR"), f);
        self.reduce_g.visit(&join(prefix, "reduceG"), f);
        self.reduce_b.visit(&join(prefix, "reduceB"), f);
        self.rcab.visit(&join(prefix, "rcab"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.branch_rg.visit_mut(&join(prefix, "branchRG"), f);
        self.branch_rb.visit_mut(&join(prefix, "branchRB"), f);
        self.branch_gr.visit_mut(&join(prefix, "branchGR"), f);
        self.branch_gb.visit_mut(&join(prefix, "branchGB"), f);
        self.branch_br.visit_mut(&join(prefix, "branchBR"), f);
        self.branch_bg.visit_mut(&join(prefix, "branchBG"), f);
        self.reduce_r.visit_mut(&join(prefix, "reduceR"), f);
        self.reduce_g.visit_mut(&join(prefix, "reduceG"), f);
        self.reduce_b.visit_mut(&join(prefix, "reduceB"), f);
        self.rcab.visit_mut(&join(prefix, "rcab"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{named_params, param_count, zero_all};
    use rand::SeedableRng;

    fn random(seed: u64, dims: &[usize]) -> Tensor<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = dims.iter().product();
        Tensor::from_vec(
            (0..n).map(|_| rand::Rng::gen_range(&mut r, 0.0..1.0)).collect(),
            dims,
        )
        .unwrap()
    }

    #[test]
    fn partner_equal_enrichee_reduces_to_self_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cl = ChannelLearning::<f64>::new(&mut rng, 4, 1, 2, false).unwrap();
        let x = random(1, &[1, 4, 4, 4]);
        let y1 = cl.forward(&x, &x).unwrap();
        // identical inputs: Q, K, V all derive from the same map
        assert_eq!(y1.dims(), x.dims());
    }

    #[test]
    fn zeroed_channel_learning_returns_enrichee() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cl = ChannelLearning::<f64>::new(&mut rng, 4, 1, 2, false).unwrap();
        zero_all(&mut cl);
        let e = random(3, &[1, 4, 4, 4]);
        let p = random(4, &[1, 4, 4, 4]);
        assert_eq!(cl.forward(&e, &p).unwrap().to_vec(), e.to_vec());
    }

    #[test]
    fn swapping_query_source_changes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = ChannelLearning::<f64>::new(&mut rng, 31, 1, 2, false).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let swapped = ChannelLearning::<f64>::new(&mut rng2, 31, 1, 2, true).unwrap();
        let e = random(6, &[1, 31, 8, 8]);
        let p = random(7, &[1, 31, 8, 8]);
        let a = normal.forward(&e, &p).unwrap();
        let b = swapped.forward(&e, &p).unwrap();
        let diff: f64 = a
            .to_vec()
            .iter()
            .zip(b.to_vec())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-6, "swap flag had no effect");
    }

    #[test]
    fn sfam_output_shape_and_branch_census() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sfam = Sfam::<f64>::new(&mut rng, 31, 1, 2, 8, false, false).unwrap();
        let t = FusionTriple::new(
            random(9, &[1, 31, 8, 8]),
            random(10, &[1, 31, 8, 8]),
            random(11, &[1, 31, 8, 8]),
        )
        .unwrap();
        let y = sfam.forward(&t).unwrap();
        assert_eq!(y.dims(), &[1, 31, 8, 8]);
        assert_eq!(param_count(&sfam), Sfam::<f64>::param_count(31, 1, 2, 8));

        // exactly six channel-learning branches in the parameter tree
        let names = named_params(&sfam);
        let branches: std::collections::HashSet<String> = names
            .iter()
            .filter_map(|(n, _)| {
                n.starts_with("branch").then(|| n.split('.').next().unwrap().to_string())
            })
            .collect();
        assert_eq!(branches.len(), SFAM_BRANCHES);
    }

    /// Intermediate per-channel fusion result, exposed for the symmetry test.
    fn intermediate_r(sfam: &Sfam<f64>, t: &FusionTriple<f64>) -> Tensor<f64> {
        let f_rg = sfam.branch_rg.forward(&t.r, &t.g).unwrap();
        let f_rb = sfam.branch_rb.forward(&t.r, &t.b).unwrap();
        sfam.reduce_r
            .forward(&Tensor::concat(&[&f_rg, &f_rb], 1).unwrap())
            .unwrap()
    }

    #[test]
    fn relabeling_inputs_and_parameters_permutes_intermediates() {
        // Rotating (r,g,b) -> (g,b,r) while remapping branch and reduce
        // parameters the same way must reproduce the original G intermediate
        // in the rotated model's R slot.
        let c = 4usize;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sfam = Sfam::<f64>::new(&mut rng, c, 1, 2, 2, false, false).unwrap();
        let (r, g, b) = (
            random(13, &[1, c, 4, 4]),
            random(14, &[1, c, 4, 4]),
            random(15, &[1, c, 4, 4]),
        );

        // original G intermediate: reduce_g(concat[ (G|R), (G|B) ])
        let f_gr = sfam.branch_gr.forward(&g, &r).unwrap();
        let f_gb = sfam.branch_gb.forward(&g, &b).unwrap();
        let cal_g = sfam
            .reduce_g
            .forward(&Tensor::concat(&[&f_gr, &f_gb], 1).unwrap())
            .unwrap();

        // rotated model: R slot receives g, partners are (b, r); its first
        // branch takes the old (G|B) parameters, the second the old (G|R),
        // and the reduce conv swaps its two input-channel blocks.
        let mut rng2 = ChaCha8Rng::seed_from_u64(12);
        let mut rotated = Sfam::<f64>::new(&mut rng2, c, 1, 2, 2, false, false).unwrap();
        rotated.branch_rg = clone_branch(&sfam.branch_gb);
        rotated.branch_rb = clone_branch(&sfam.branch_gr);
        rotated.reduce_r = Conv2dLayer {
            weight: {
                let idx: Vec<usize> = (c..2 * c).chain(0..c).collect();
                sfam.reduce_g.weight.index_select(1, &idx).unwrap()
            },
            bias: sfam.reduce_g.bias.clone(),
            stride: 1,
            padding: 1,
            groups: 1,
        };
        let rotated_triple = FusionTriple::new(g.clone(), b.clone(), r.clone()).unwrap();
        let cal_r_rotated = intermediate_r(&rotated, &rotated_triple);

        for (a, e) in cal_r_rotated.to_vec().iter().zip(cal_g.to_vec()) {
            assert!((a - e).abs() < 1e-12, "symmetry violated: {a} vs {e}");
        }
    }

    fn clone_branch(cl: &ChannelLearning<f64>) -> ChannelLearning<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut fresh = ChannelLearning::<f64>::new(&mut rng, cl.attn.dim, cl.attn.heads, 2, cl.swap_query_source).unwrap();
        let mut src = Vec::new();
        cl.visit("", &mut |_, t| src.push(t.clone()));
        let mut i = 0;
        fresh.visit_mut("", &mut |_, t| {
            *t = src[i].clone();
            i += 1;
        });
        fresh
    }
}
