//! Residual coordinate-attention block.

use rand_chacha::ChaCha8Rng;

use super::layers::Conv2dLayer;
use crate::error::{Error, Result};
use crate::params::{join, ParamSet};
use crate::tensor::{Element, Tensor};

/// conv-relu-conv body gated by coordinate attention (separate average pools
/// along H and along W, a joint pointwise transform, sigmoid gates multiplied
/// back over both axes), then a residual add. When input and output channel
/// counts differ the skip goes through a pointwise projection.
pub struct Rcab<E: Element> {
    conv1: Conv2dLayer<E>,
    conv2: Conv2dLayer<E>,
    gate_joint: Conv2dLayer<E>,
    gate_h: Conv2dLayer<E>,
    gate_w: Conv2dLayer<E>,
    skip: Option<Conv2dLayer<E>>,
    cin: usize,
}

impl<E: Element> Rcab<E> {
    pub fn new(rng: &mut ChaCha8Rng, cin: usize, cout: usize, reduction: usize) -> Self {
        let mid = (cout / reduction.max(1)).max(1);
        // body convs pad by reflection (applied in forward) so constant maps
        // stay constant through the block
        Rcab {
            conv1: Conv2dLayer::new(rng, cin, cout, 3, 1, 0, 1),
            conv2: Conv2dLayer::new(rng, cout, cout, 3, 1, 0, 1),
            gate_joint: Conv2dLayer::new(rng, cout, mid, 1, 1, 0, 1),
            gate_h: Conv2dLayer::new(rng, mid, cout, 1, 1, 0, 1),
            gate_w: Conv2dLayer::new(rng, mid, cout, 1, 1, 0, 1),
            skip: (cin != cout).then(|| Conv2dLayer::new(rng, cin, cout, 1, 1, 0, 1)),
            cin,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let d = x.dims();
        if d.len() != 4 || d[1] != self.cin {
            return Err(Error::ShapeMismatch {
                op: "rcab",
                lhs: x.shape().to_string(),
                rhs: format!("[B, {}, H, W]", self.cin),
            });
        }
        let (h, w) = (d[2], d[3]);
        let reflect = |t: &Tensor<E>| t.pad2d([1, 1, 1, 1], crate::tensor::PadMode::Reflect);
        let t = self
            .conv2
            .forward(&reflect(&self.conv1.forward(&reflect(x)?)?.relu()?)?)?;

        let pool_h = t.mean_axis(3, true)?; // [B, C, H, 1]
        let pool_w = t.mean_axis(2, true)?.permute(&[0, 1, 3, 2])?; // [B, C, W, 1]
        let joint = Tensor::concat(&[&pool_h, &pool_w], 2)?;
        let mid = self.gate_joint.forward(&joint)?.relu()?;
        let gate_h = self.gate_h.forward(&mid.narrow(2, 0, h)?)?.sigmoid()?; // [B, C, H, 1]
        let gate_w = self
            .gate_w
            .forward(&mid.narrow(2, h, w)?)?
            .sigmoid()?
            .permute(&[0, 1, 3, 2])?; // [B, C, 1, W]
        let gated = t.mul(&gate_h)?.mul(&gate_w)?;

        match &self.skip {
            Some(proj) => proj.forward(x)?.add(&gated),
            None => x.add(&gated),
        }
    }

    pub fn param_count(cin: usize, cout: usize, reduction: usize) -> u64 {
        let mid = (cout / reduction.max(1)).max(1);
        let mut n = Conv2dLayer::<E>::param_count(cin, cout, 3, 1)
            + Conv2dLayer::<E>::param_count(cout, cout, 3, 1)
            + Conv2dLayer::<E>::param_count(cout, mid, 1, 1)
            + 2 * Conv2dLayer::<E>::param_count(mid, cout, 1, 1);
        if cin != cout {
            n += Conv2dLayer::<E>::param_count(cin, cout, 1, 1);
        }
        n
    }
}

impl<E: Element> ParamSet<E> for Rcab<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.gate_joint.visit(&join(prefix, "gate_joint"), f);
        self.gate_h.visit(&join(prefix, "gate_h"), f);
        self.gate_w.visit(&join(prefix, "gate_w"), f);
        if let Some(s) = &self.skip {
            s.visit(&join(prefix, "skip"), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.gate_joint.visit_mut(&join(prefix, "gate_joint"), f);
        self.gate_h.visit_mut(&join(prefix, "gate_h"), f);
        self.gate_w.visit_mut(&join(prefix, "gate_w"), f);
        if let Some(s) = &mut self.skip {
            s.visit_mut(&join(prefix, "skip"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{param_count, zero_all};
    use rand::SeedableRng;

    #[test]
    fn zeroed_body_is_identity_for_equal_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rcab = Rcab::<f64>::new(&mut rng, 8, 8, 8);
        zero_all(&mut rcab);
        let x = Tensor::from_vec((0..8 * 36).map(|v| v as f64 * 0.01).collect(), &[1, 8, 6, 6]).unwrap();
        let y = rcab.forward(&x).unwrap();
        assert_eq!(x.to_vec(), y.to_vec());
    }

    #[test]
    fn constant_input_gives_constant_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rcab = Rcab::<f64>::new(&mut rng, 4, 4, 2);
        let x = Tensor::<f64>::full(&[1, 4, 5, 5], 0.6).unwrap();
        let y = rcab.forward(&x).unwrap();
        for c in 0..4 {
            let first = y.at(&[0, c, 0, 0]);
            for i in 0..5 {
                for j in 0..5 {
                    assert!((y.at(&[0, c, i, j]) - first).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn channel_reducing_form_matches_census() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rcab = Rcab::<f64>::new(&mut rng, 93, 31, 8);
        assert_eq!(param_count(&rcab), Rcab::<f64>::param_count(93, 31, 8));
        let x = Tensor::<f64>::full(&[1, 93, 4, 4], 0.2).unwrap();
        assert_eq!(rcab.forward(&x).unwrap().dims(), &[1, 31, 4, 4]);
    }
}
