//! Shared building blocks: conv layers, channel layer norm, feed-forward.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{join, ones_param, uniform_init, zeros_param, ParamSet};
use crate::tensor::{Element, Tensor};

pub struct Conv2dLayer<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl<E: Element> Conv2dLayer<E> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Self {
        let fan_in = (cin / groups) * kernel * kernel;
        Conv2dLayer {
            weight: uniform_init(rng, &[cout, cin / groups, kernel, kernel], fan_in),
            bias: zeros_param(&[cout]),
            stride,
            padding,
            groups,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.padding, self.groups)
    }

    pub fn param_count(cin: usize, cout: usize, kernel: usize, groups: usize) -> u64 {
        (cout * (cin / groups) * kernel * kernel + cout) as u64
    }
}

impl<E: Element> ParamSet<E> for Conv2dLayer<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Layer norm over the channel axis of `[B, C, H, W]`.
pub struct ChannelNorm<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub eps: f64,
}

impl<E: Element> ChannelNorm<E> {
    pub fn new(channels: usize) -> Self {
        ChannelNorm {
            gamma: ones_param(&[channels]),
            beta: zeros_param(&[channels]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.layer_norm(1, &self.gamma, &self.beta, self.eps)
    }

    pub fn param_count(channels: usize) -> u64 {
        2 * channels as u64
    }
}

impl<E: Element> ParamSet<E> for ChannelNorm<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Residual feed-forward sublayer: `t + conv1x1(gelu(conv1x1(norm(t))))`.
pub struct FeedForward<E: Element> {
    pub norm: ChannelNorm<E>,
    pub expand: Conv2dLayer<E>,
    pub contract: Conv2dLayer<E>,
}

impl<E: Element> FeedForward<E> {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, expansion: usize) -> Self {
        let hidden = channels * expansion.max(1);
        FeedForward {
            norm: ChannelNorm::new(channels),
            expand: Conv2dLayer::new(rng, channels, hidden, 1, 1, 0, 1),
            contract: Conv2dLayer::new(rng, hidden, channels, 1, 1, 0, 1),
        }
    }

    pub fn forward(&self, t: &Tensor<E>) -> Result<Tensor<E>> {
        let h = self.contract.forward(&self.expand.forward(&self.norm.forward(t)?)?.gelu()?)?;
        t.add(&h)
    }

    /// Zero the contracting conv so the sublayer starts as an identity.
    pub fn zero_contract(&mut self) {
        self.contract.weight = Tensor::zeros(self.contract.weight.dims())
            .expect("valid dims")
            .with_requires_grad();
    }

    pub fn param_count(channels: usize, expansion: usize) -> u64 {
        let hidden = channels * expansion.max(1);
        ChannelNorm::<E>::param_count(channels)
            + Conv2dLayer::<E>::param_count(channels, hidden, 1, 1)
            + Conv2dLayer::<E>::param_count(hidden, channels, 1, 1)
    }
}

impl<E: Element> ParamSet<E> for FeedForward<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.norm.visit(&join(prefix, "norm"), f);
        self.expand.visit(&join(prefix, "expand"), f);
        self.contract.visit(&join(prefix, "contract"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.expand.visit_mut(&join(prefix, "expand"), f);
        self.contract.visit_mut(&join(prefix, "contract"), f);
    }
}
