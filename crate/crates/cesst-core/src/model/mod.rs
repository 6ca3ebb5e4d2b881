//! Full three-scale assembly: per-channel feature extraction, spectrum
//! fusion, coarse-to-fine guidance, and the ablation variant switches.

mod flops;

pub use flops::model_flops;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{
    BlockKind, BlockSettings, Conv2dLayer, Feb, FebConfig, FusionTriple, MsaKind, Sccm, Sfam,
};
use crate::data::{HsiCube, RgbImage, BANDS};
use crate::error::{Error, Result};
use crate::params::{join, ParamSet};
use crate::tensor::{Element, PadMode, Tensor};

pub const SCALES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Sfam,
    ConcatConv,
}

/// Every architecture hyperparameter the reference description leaves open,
/// plus the ablation switches. Unknown JSON keys are rejected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CesstConfig {
    pub seed: u64,
    pub scales: usize,
    pub bands: usize,
    pub feb: FebConfig,
    pub window: usize,
    pub spatial_heads: usize,
    pub spectral_heads: usize,
    pub fusion_heads: usize,
    pub ffn_expansion: usize,
    pub rcab_reduction: usize,
    pub independent_modeling: bool,
    pub block: BlockKind,
    pub fusion: FusionKind,
    pub msa: MsaKind,
    pub swap_query_source: bool,
    /// Zero-init residual branch outputs: the network starts near the
    /// identity-plus-global-residual map, which stabilizes early training.
    pub safe_init: bool,
}

impl Default for CesstConfig {
    /// Toy desk-scale configuration: the full acceptance suite runs on one
    /// CPU core in minutes.
    fn default() -> Self {
        CesstConfig {
            seed: 0,
            scales: SCALES,
            bands: BANDS,
            feb: FebConfig {
                level_widths: [16, 16, 16],
                blocks_per_level: 1,
            },
            window: 4,
            spatial_heads: 2,
            spectral_heads: 2,
            fusion_heads: 1,
            ffn_expansion: 2,
            rcab_reduction: 8,
            independent_modeling: true,
            block: BlockKind::Ssab,
            fusion: FusionKind::Sfam,
            msa: MsaKind::SpatioSpectral,
            swap_query_source: false,
            safe_init: false,
        }
    }
}

impl CesstConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales != SCALES {
            return Err(Error::Config(format!(
                "scale count is fixed at {SCALES}, got {}",
                self.scales
            )));
        }
        if self.bands != BANDS {
            return Err(Error::Config(format!(
                "band count is fixed at {BANDS}, got {}",
                self.bands
            )));
        }
        if self.bands % self.fusion_heads != 0 {
            return Err(Error::Config(format!(
                "fusion heads {} must divide {} bands",
                self.fusion_heads, self.bands
            )));
        }
        if self.fusion == FusionKind::Sfam && !self.independent_modeling {
            return Err(Error::Config(
                "spectrum fusion needs independent per-channel embeddings".into(),
            ));
        }
        if self.block == BlockKind::Ssab {
            for w in self.feb.level_widths {
                let settings = self.block_settings();
                settings.ssab_config(w).validate()?;
            }
        }
        if self.feb.blocks_per_level == 0 {
            return Err(Error::Config("blocks_per_level must be >= 1".into()));
        }
        Ok(())
    }

    pub fn block_settings(&self) -> BlockSettings {
        BlockSettings {
            kind: self.block,
            window: self.window,
            spatial_heads: self.spatial_heads,
            spectral_heads: self.spectral_heads,
            ffn_expansion: self.ffn_expansion,
            msa: self.msa,
            safe_init: self.safe_init,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CesstConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Ablation rows: the break-down pipeline rows plus the MSA comparison rows.
pub const ABLATION_ROWS: [&str; 8] = [
    "baseline",
    "independent",
    "ssab",
    "full",
    "msa-spatial",
    "msa-shifted-window",
    "msa-spectral",
    "msa-shuffle-window",
];

/// Configuration for a named ablation row, derived from a base config.
pub fn make_variant(base: &CesstConfig, row: &str) -> Result<CesstConfig> {
    let mut cfg = *base;
    match row {
        "baseline" => {
            cfg.independent_modeling = false;
            cfg.block = BlockKind::Resnet;
            cfg.fusion = FusionKind::ConcatConv;
        }
        "independent" => {
            cfg.independent_modeling = true;
            cfg.block = BlockKind::Resnet;
            cfg.fusion = FusionKind::ConcatConv;
        }
        "ssab" => {
            cfg.independent_modeling = true;
            cfg.block = BlockKind::Ssab;
            cfg.msa = MsaKind::SpatioSpectral;
            cfg.fusion = FusionKind::ConcatConv;
        }
        "full" | "msa-spatio-spectral" => {
            cfg.independent_modeling = true;
            cfg.block = BlockKind::Ssab;
            cfg.msa = MsaKind::SpatioSpectral;
            cfg.fusion = FusionKind::Sfam;
        }
        "msa-spatial" => {
            cfg = make_variant(base, "full")?;
            cfg.msa = MsaKind::SpatialOnly;
        }
        "msa-shifted-window" => {
            cfg = make_variant(base, "full")?;
            cfg.msa = MsaKind::ShiftedWindow;
        }
        "msa-spectral" => {
            cfg = make_variant(base, "full")?;
            cfg.msa = MsaKind::SpectralOnly;
        }
        "msa-shuffle-window" => {
            cfg = make_variant(base, "full")?;
            cfg.msa = MsaKind::ShuffleOnly;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown ablation row '{other}' (expected one of {:?})",
                ABLATION_ROWS
            )))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Per-scale predictions, finest first: `[B, 31, H/2^s, W/2^s]`.
pub struct MultiScalePrediction<E: Element> {
    pub levels: [Tensor<E>; SCALES],
}

enum Fusion<E: Element> {
    Sfam(Sfam<E>),
    ConcatConv(Conv2dLayer<E>),
}

struct Scale<E: Element> {
    febs: Vec<Feb<E>>,
    fusion: Fusion<E>,
    sccm: Option<Sccm<E>>,
}

impl<E: Element> Scale<E> {
    fn new(rng: &mut ChaCha8Rng, cfg: &CesstConfig, with_sccm: bool) -> Result<Self> {
        let settings = cfg.block_settings();
        let bands = cfg.bands;
        let febs = if cfg.independent_modeling {
            (0..3)
                .map(|_| Feb::new(rng, 1, bands, &cfg.feb, &settings))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![Feb::new(rng, 3, bands, &cfg.feb, &settings)?]
        };
        let fusion = match cfg.fusion {
            FusionKind::Sfam => Fusion::Sfam(Sfam::new(
                rng,
                bands,
                cfg.fusion_heads,
                cfg.ffn_expansion,
                cfg.rcab_reduction,
                cfg.swap_query_source,
                cfg.safe_init,
            )?),
            FusionKind::ConcatConv => {
                let cin = bands * febs.len();
                Fusion::ConcatConv(Conv2dLayer::new(rng, cin, bands, 3, 1, 1, 1))
            }
        };
        Ok(Scale {
            febs,
            fusion,
            sccm: with_sccm.then(|| Sccm::with_init(rng, bands, bands, cfg.safe_init)),
        })
    }

    /// Embed, add guidance, fuse. Returns the fused 31-band feature map.
    fn forward(&self, rgb: &Tensor<E>, guidance: Option<&Tensor<E>>) -> Result<Tensor<E>> {
        let mut embeddings = if self.febs.len() == 3 {
            (0..3)
                .map(|c| self.febs[c].forward(&rgb.narrow(1, c, 1)?))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![self.febs[0].forward(rgb)?]
        };
        if let Some(g) = guidance {
            for e in embeddings.iter_mut() {
                *e = e.add(g)?;
            }
        }
        match (&self.fusion, embeddings.len()) {
            (Fusion::Sfam(sfam), 3) => {
                let triple = FusionTriple::new(
                    embeddings[0].clone(),
                    embeddings[1].clone(),
                    embeddings[2].clone(),
                )?;
                sfam.forward(&triple)
            }
            (Fusion::ConcatConv(conv), 3) => {
                let cat = Tensor::concat(
                    &[&embeddings[0], &embeddings[1], &embeddings[2]],
                    1,
                )?;
                conv.forward(&cat)
            }
            (Fusion::ConcatConv(conv), _) => conv.forward(&embeddings[0]),
            (Fusion::Sfam(_), _) => Err(Error::Config(
                "spectrum fusion needs three embeddings".into(),
            )),
        }
    }
}

impl<E: Element> ParamSet<E> for Scale<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        if self.febs.len() == 3 {
            for (feb, tag) in self.febs.iter().zip(["febR", "febG", "febB"]) {
                feb.visit(&join(prefix, tag), f);
            }
        } else {
            self.febs[0].visit(&join(prefix, "feb"), f);
        }
        match &self.fusion {
            Fusion::Sfam(s) => s.visit(&join(prefix, "fusion"), f),
            Fusion::ConcatConv(c) => c.visit(&join(prefix, "fusion"), f),
        }
        if let Some(s) = &self.sccm {
            s.visit(&join(prefix, "sccm"), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        if self.febs.len() == 3 {
            for (feb, tag) in self.febs.iter_mut().zip(["febR", "febG", "febB"]) {
                feb.visit_mut(&join(prefix, tag), f);
            }
        } else {
            self.febs[0].visit_mut(&join(prefix, "feb"), f);
        }
        match &mut self.fusion {
            Fusion::Sfam(s) => s.visit_mut(&join(prefix, "fusion"), f),
            Fusion::ConcatConv(c) => c.visit_mut(&join(prefix, "fusion"), f),
        }
        if let Some(s) = &mut self.sccm {
            s.visit_mut(&join(prefix, "sccm"), f);
        }
    }
}

/// The full model: three scales (full, half, quarter), coarse-to-fine
/// guidance, and a global residual from the RGB input.
pub struct Cesst<E: Element> {
    cfg: CesstConfig,
    scales: Vec<Scale<E>>,
    global_residual: Conv2dLayer<E>,
}

impl<E: Element> Cesst<E> {
    pub fn new(cfg: &CesstConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        // scale 0 = full resolution (no supervision head of its own);
        // scales 1 and 2 carry spectrum-consistency modules
        let scales = (0..SCALES)
            .map(|s| Scale::new(&mut rng, cfg, s > 0))
            .collect::<Result<Vec<_>>>()?;
        // the long skip starts as the channel-mean map: every band predicts
        // mean(R, G, B), a sane first guess for reflectance-like scenes
        let mut global_residual = Conv2dLayer::new(&mut rng, 3, cfg.bands, 1, 1, 0, 1);
        global_residual.weight = Tensor::full(&[cfg.bands, 3, 1, 1], E::from_f64(1.0 / 3.0))
            .expect("valid dims")
            .with_requires_grad();
        Ok(Cesst {
            cfg: *cfg,
            scales,
            global_residual,
        })
    }

    pub fn config(&self) -> &CesstConfig {
        &self.cfg
    }

    /// Multi-scale forward pass over `[B, 3, H, W]` in [0, 1] with H, W
    /// multiples of 16.
    pub fn forward(&self, rgb: &Tensor<E>) -> Result<MultiScalePrediction<E>> {
        let d = rgb.dims();
        if d.len() != 4 || d[1] != 3 {
            return Err(Error::ShapeMismatch {
                op: "cesst_forward",
                lhs: rgb.shape().to_string(),
                rhs: "[B, 3, H, W]".into(),
            });
        }
        if d[2] % 16 != 0 || d[3] % 16 != 0 {
            return Err(Error::InvalidArg {
                op: "cesst_forward",
                msg: format!("H and W must be multiples of 16, got {}x{}", d[2], d[3]),
            });
        }
        let half = rgb.resize_bilinear(0.5)?;
        let quarter = half.resize_bilinear(0.5)?;

        // coarse to fine: the quarter scale guides the half scale, which
        // guides the full scale
        let feat_q = self.scales[2].forward(&quarter, None)?;
        let sccm_q = self.scales[2].sccm.as_ref().expect("quarter scale sccm");
        let out_q = sccm_q.forward(&feat_q)?;

        let feat_h = self.scales[1].forward(&half, Some(&out_q.guidance))?;
        let sccm_h = self.scales[1].sccm.as_ref().expect("half scale sccm");
        let out_h = sccm_h.forward(&feat_h)?;

        let feat_f = self.scales[0].forward(rgb, Some(&out_h.guidance))?;
        let x1 = feat_f.add(&self.global_residual.forward(rgb)?)?;

        Ok(MultiScalePrediction {
            levels: [x1, out_h.prediction, out_q.prediction],
        })
    }

    /// Analytic parameter count, mirroring construction arithmetic. An
    /// independent check against the visitor census.
    pub fn analytic_param_count(cfg: &CesstConfig) -> u64 {
        let settings = cfg.block_settings();
        let bands = cfg.bands;
        let feb = |cin: usize| Feb::<E>::param_count(cin, bands, &cfg.feb, &settings);
        let per_scale_febs = if cfg.independent_modeling {
            3 * feb(1)
        } else {
            feb(3)
        };
        let fusion = match cfg.fusion {
            FusionKind::Sfam => Sfam::<E>::param_count(
                bands,
                cfg.fusion_heads,
                cfg.ffn_expansion,
                cfg.rcab_reduction,
            ),
            FusionKind::ConcatConv => {
                let cin = bands * if cfg.independent_modeling { 3 } else { 1 };
                Conv2dLayer::<E>::param_count(cin, bands, 3, 1)
            }
        };
        let sccm = Sccm::<E>::param_count(bands, bands);
        SCALES as u64 * (per_scale_febs + fusion)
            + 2 * sccm
            + Conv2dLayer::<E>::param_count(3, bands, 1, 1)
    }
}

impl<E: Element> ParamSet<E> for Cesst<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        for (s, scale) in self.scales.iter().enumerate() {
            scale.visit(&join(prefix, &format!("scale{s}")), f);
        }
        self.global_residual.visit(&join(prefix, "global_residual"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        for (s, scale) in self.scales.iter_mut().enumerate() {
            scale.visit_mut(&join(prefix, &format!("scale{s}")), f);
        }
        self.global_residual
            .visit_mut(&join(prefix, "global_residual"), f);
    }
}

impl Cesst<f32> {
    /// Deployment path: arbitrary input size, padded to multiples of 16 and
    /// cropped back; output clamped to [0, 1] and wavelength-annotated.
    pub fn infer(&self, rgb: &RgbImage) -> Result<HsiCube> {
        let (h, w) = (rgb.height(), rgb.width());
        let x = rgb.data().reshape(&[1, 3, h, w])?;
        let pad_h = (16 - h % 16) % 16;
        let pad_w = (16 - w % 16) % 16;
        let padded = if pad_h > 0 || pad_w > 0 {
            // reflect when the image is large enough, zero otherwise
            let mode = if pad_h < h && pad_w < w {
                PadMode::Reflect
            } else {
                PadMode::Zero
            };
            x.pad2d([0, pad_h, 0, pad_w], mode)?
        } else {
            x
        };
        let pred = self.forward(&padded)?;
        let full = pred.levels[0]
            .narrow(2, 0, h)?
            .narrow(3, 0, w)?
            .clamp(0.0, 1.0)?
            .reshape(&[self.cfg.bands, h, w])?;
        HsiCube::new(full.detach())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::param_count;

    fn tiny_cfg() -> CesstConfig {
        CesstConfig {
            feb: FebConfig {
                level_widths: [8, 8, 8],
                blocks_per_level: 1,
            },
            window: 2,
            ..CesstConfig::default()
        }
    }

    fn rgb_input(seed: u64, h: usize, w: usize) -> Tensor<f32> {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect(),
            &[1, 3, h, w],
        )
        .unwrap()
    }

    #[test]
    fn shape_contract_across_scales() {
        let model = Cesst::<f32>::new(&tiny_cfg()).unwrap();
        let pred = model.forward(&rgb_input(0, 64, 64)).unwrap();
        assert_eq!(pred.levels[0].dims(), &[1, 31, 64, 64]);
        assert_eq!(pred.levels[1].dims(), &[1, 31, 32, 32]);
        assert_eq!(pred.levels[2].dims(), &[1, 31, 16, 16]);
    }

    #[test]
    fn census_matches_analytic_count() {
        for row in ABLATION_ROWS {
            let cfg = make_variant(&tiny_cfg(), row).unwrap();
            let model = Cesst::<f32>::new(&cfg).unwrap();
            assert_eq!(
                param_count(&model),
                Cesst::<f32>::analytic_param_count(&cfg),
                "row {row}"
            );
        }
    }

    #[test]
    fn shared_feb_drops_parameter_count() {
        let mut cfg = tiny_cfg();
        cfg.fusion = FusionKind::ConcatConv;
        let independent = Cesst::<f32>::analytic_param_count(&cfg);
        cfg.independent_modeling = false;
        let shared = Cesst::<f32>::analytic_param_count(&cfg);
        assert!(shared < independent);
        let model = Cesst::<f32>::new(&cfg).unwrap();
        assert_eq!(param_count(&model), shared);
    }

    #[test]
    fn baseline_has_fewer_parameters_than_full() {
        let base = make_variant(&tiny_cfg(), "baseline").unwrap();
        let full = make_variant(&tiny_cfg(), "full").unwrap();
        assert!(
            Cesst::<f32>::analytic_param_count(&base) < Cesst::<f32>::analytic_param_count(&full)
        );
    }

    #[test]
    fn unknown_row_is_a_config_error() {
        assert!(matches!(
            make_variant(&tiny_cfg(), "nonsense"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn forward_is_deterministic_given_seed() {
        let cfg = tiny_cfg();
        let m1 = Cesst::<f32>::new(&cfg).unwrap();
        let m2 = Cesst::<f32>::new(&cfg).unwrap();
        let x = rgb_input(5, 32, 32);
        let a = m1.forward(&x).unwrap();
        let b = m2.forward(&x).unwrap();
        for (l, r) in a.levels.iter().zip(&b.levels) {
            for (u, v) in l.to_vec().iter().zip(r.to_vec()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = Cesst::<f32>::new(&tiny_cfg()).unwrap();
        // wrong channel count
        let x = Tensor::<f32>::zeros(&[1, 4, 32, 32]).unwrap();
        assert!(model.forward(&x).is_err());
        // not multiples of 16
        let x = Tensor::<f32>::zeros(&[1, 3, 20, 20]).unwrap();
        assert!(model.forward(&x).is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let err = CesstConfig::from_json("{\"bogus_key\": 1}").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let ok = CesstConfig::from_json("{\"window\": 2}").unwrap();
        assert_eq!(ok.window, 2);
    }

    #[test]
    fn infer_pads_and_crops_transparently() {
        let cfg = tiny_cfg();
        let model = Cesst::<f32>::new(&cfg).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f32> = (0..3 * 30 * 30).map(|_| rng.gen_range(0.0..1.0)).collect();
        let small = RgbImage::new(Tensor::from_vec(data.clone(), &[3, 30, 30]).unwrap()).unwrap();
        let cube_small = model.infer(&small).unwrap();
        assert_eq!(cube_small.data().dims(), &[31, 30, 30]);
        // all outputs in [0, 1]
        for &v in cube_small.data().data() {
            assert!((0.0..=1.0).contains(&v));
        }
        // wavelengths are the 31 bands 400..700
        assert_eq!(cube_small.wavelengths()[0], 400.0);
        assert_eq!(cube_small.wavelengths()[30], 700.0);

        // padding transparency: manual reflect pad to 32, infer, crop back
        let padded = Tensor::from_vec(data, &[3, 30, 30])
            .unwrap()
            .pad2d([0, 2, 0, 2], PadMode::Reflect)
            .unwrap();
        let big = RgbImage::new(padded).unwrap();
        let cube_big = model.infer(&big).unwrap();
        for b in 0..31 {
            for i in 0..30 {
                for j in 0..30 {
                    let a = cube_small.data().at(&[b, i, j]);
                    let c = cube_big.data().at(&[b, i, j]);
                    assert!((a - c).abs() < 1e-5, "pad transparency at {b},{i},{j}");
                }
            }
        }
    }
}
