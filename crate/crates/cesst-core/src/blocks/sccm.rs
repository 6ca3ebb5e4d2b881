//! Supervised spectrum-consistency module.
//!
//! Emits the per-scale 31-band prediction and guidance features for the next
//! larger scale: a zero-centered sigmoid mask derived from the prediction
//! (plus a per-channel offset initialized to one) modulates the incoming
//! features, which are then upsampled x2.

use rand_chacha::ChaCha8Rng;

use super::layers::Conv2dLayer;
use crate::error::{Error, Result};
use crate::params::{full_param, join, ParamSet};
use crate::tensor::{Element, Tensor};

pub struct Sccm<E: Element> {
    head: Conv2dLayer<E>,
    gate: Conv2dLayer<E>,
    gate_offset: Tensor<E>,
    channels: usize,
    bands: usize,
}

pub struct SccmOutput<E: Element> {
    pub prediction: Tensor<E>,
    pub guidance: Tensor<E>,
}

impl<E: Element> Sccm<E> {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, bands: usize) -> Self {
        Self::with_init(rng, channels, bands, false)
    }

    pub fn with_init(rng: &mut ChaCha8Rng, channels: usize, bands: usize, safe_init: bool) -> Self {
        let mut gate = Conv2dLayer::new(rng, bands, channels, 1, 1, 0, 1);
        if safe_init {
            gate.weight = crate::tensor::Tensor::zeros(gate.weight.dims())
                .expect("valid dims")
                .with_requires_grad();
        }
        Sccm {
            head: Conv2dLayer::new(rng, channels, bands, 3, 1, 1, 1),
            gate,
            gate_offset: full_param(&[channels], 1.0),
            channels,
            bands,
        }
    }

    /// With zeroed gate weights and the offset at its init value of one, the
    /// mask is exactly one and guidance is a pure x2 upsample of the features.
    pub fn forward(&self, features: &Tensor<E>) -> Result<SccmOutput<E>> {
        let d = features.dims();
        if d.len() != 4 || d[1] != self.channels {
            return Err(Error::ShapeMismatch {
                op: "sccm",
                lhs: features.shape().to_string(),
                rhs: format!("[B, {}, H, W]", self.channels),
            });
        }
        let prediction = self.head.forward(features)?;
        let mask = self
            .gate
            .forward(&prediction)?
            .sigmoid()?
            .add_scalar(E::from_f64(-0.5))?
            .add(&self.gate_offset.reshape(&[1, self.channels, 1, 1])?)?;
        let modulated = features.mul(&mask)?;
        let guidance = modulated.resize_bilinear(2.0)?;
        Ok(SccmOutput {
            prediction,
            guidance,
        })
    }

    pub fn param_count(channels: usize, bands: usize) -> u64 {
        Conv2dLayer::<E>::param_count(channels, bands, 3, 1)
            + Conv2dLayer::<E>::param_count(bands, channels, 1, 1)
            + channels as u64
    }

    pub fn bands(&self) -> usize {
        self.bands
    }
}

impl<E: Element> ParamSet<E> for Sccm<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.head.visit(&join(prefix, "head"), f);
        self.gate.visit(&join(prefix, "gate"), f);
        f(&join(prefix, "gate_offset"), &self.gate_offset);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.head.visit_mut(&join(prefix, "head"), f);
        self.gate.visit_mut(&join(prefix, "gate"), f);
        f(&join(prefix, "gate_offset"), &mut self.gate_offset);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn shapes_match_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sccm = Sccm::<f32>::new(&mut rng, 31, 31);
        let x = Tensor::<f32>::full(&[1, 31, 8, 8], 0.4).unwrap();
        let out = sccm.forward(&x).unwrap();
        assert_eq!(out.prediction.dims(), &[1, 31, 8, 8]);
        assert_eq!(out.guidance.dims(), &[1, 31, 16, 16]);
    }

    #[test]
    fn zero_mask_weights_unit_offset_is_pure_upsample() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sccm = Sccm::<f64>::new(&mut rng, 8, 31);
        // zero only the mask branch; keep head weights (prediction may vary)
        sccm.gate.weight = Tensor::zeros(sccm.gate.weight.dims()).unwrap().with_requires_grad();
        sccm.gate.bias = Tensor::zeros(&[8]).unwrap().with_requires_grad();
        let x = Tensor::from_vec((0..8 * 16).map(|v| v as f64 * 0.01).collect(), &[1, 8, 4, 4]).unwrap();
        let out = sccm.forward(&x).unwrap();
        let expect = x.resize_bilinear(2.0).unwrap();
        for (a, e) in out.guidance.to_vec().iter().zip(expect.to_vec()) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}
