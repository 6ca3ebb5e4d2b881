//! Window-based, shuffle-window, and spectral multi-head self-attention.

use rand_chacha::ChaCha8Rng;

use super::WindowSpec;
use crate::error::{Error, Result};
use crate::params::{join, uniform_init, zeros_param, ParamSet};
use crate::tensor::{Element, PadMode, Tensor};

/// Projection weights for one MSA: Q/K/V/output matrices with biases, plus a
/// per-head learnable temperature for the spectral variant.
pub struct AttentionParams<E: Element> {
    pub dim: usize,
    pub heads: usize,
    pub wq: Tensor<E>,
    pub wk: Tensor<E>,
    pub wv: Tensor<E>,
    pub wo: Tensor<E>,
    pub bq: Tensor<E>,
    pub bk: Tensor<E>,
    pub bv: Tensor<E>,
    pub bo: Tensor<E>,
    pub temperature: Option<Tensor<E>>,
}

impl<E: Element> AttentionParams<E> {
    fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize, spectral: bool) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "head count {heads} must divide embed dim {dim}"
            )));
        }
        Ok(AttentionParams {
            dim,
            heads,
            wq: uniform_init(rng, &[dim, dim], dim),
            wk: uniform_init(rng, &[dim, dim], dim),
            wv: uniform_init(rng, &[dim, dim], dim),
            wo: uniform_init(rng, &[dim, dim], dim),
            bq: zeros_param(&[dim]),
            bk: zeros_param(&[dim]),
            bv: zeros_param(&[dim]),
            bo: zeros_param(&[dim]),
            // tau = 1 at init
            temperature: if spectral {
                Some(crate::params::ones_param(&[heads]))
            } else {
                None
            },
        })
    }

    pub fn new_spatial(rng: &mut ChaCha8Rng, dim: usize, heads: usize) -> Result<Self> {
        Self::new(rng, dim, heads, false)
    }

    pub fn new_spectral(rng: &mut ChaCha8Rng, dim: usize, heads: usize) -> Result<Self> {
        Self::new(rng, dim, heads, true)
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Zero the output projection so the block starts as an identity
    /// contributor (safe init).
    pub fn zero_output_proj(&mut self) {
        self.wo = Tensor::zeros(&[self.dim, self.dim])
            .expect("valid dims")
            .with_requires_grad();
    }
}

impl<E: Element> ParamSet<E> for AttentionParams<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        f(&join(prefix, "wq"), &self.wq);
        f(&join(prefix, "wk"), &self.wk);
        f(&join(prefix, "wv"), &self.wv);
        f(&join(prefix, "wo"), &self.wo);
        f(&join(prefix, "bq"), &self.bq);
        f(&join(prefix, "bk"), &self.bk);
        f(&join(prefix, "bv"), &self.bv);
        f(&join(prefix, "bo"), &self.bo);
        if let Some(t) = &self.temperature {
            f(&join(prefix, "temperature"), t);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&join(prefix, "wq"), &mut self.wq);
        f(&join(prefix, "wk"), &mut self.wk);
        f(&join(prefix, "wv"), &mut self.wv);
        f(&join(prefix, "wo"), &mut self.wo);
        f(&join(prefix, "bq"), &mut self.bq);
        f(&join(prefix, "bk"), &mut self.bk);
        f(&join(prefix, "bv"), &mut self.bv);
        f(&join(prefix, "bo"), &mut self.bo);
        if let Some(t) = &mut self.temperature {
            f(&join(prefix, "temperature"), t);
        }
    }
}

/// Depthwise convolution bridging the two window passes; kernel size equals
/// the window size.
pub struct DepthwiseBridge<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub kernel: usize,
}

impl<E: Element> DepthwiseBridge<E> {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, kernel: usize) -> Self {
        DepthwiseBridge {
            weight: uniform_init(rng, &[channels, 1, kernel, kernel], kernel * kernel),
            bias: zeros_param(&[channels]),
            kernel,
        }
    }

    /// Same-size depthwise conv; even kernels pad asymmetrically.
    pub fn apply(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let k = self.kernel;
        let before = (k - 1) / 2;
        let after = k - 1 - before;
        let c = x.dims()[1];
        x.pad2d([before, after, before, after], PadMode::Zero)?
            .conv2d(&self.weight, Some(&self.bias), 1, 0, c)
    }
}

impl<E: Element> ParamSet<E> for DepthwiseBridge<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Output of an attention pass plus the post-softmax attention matrices,
/// kept for normalization checks.
pub struct MsaTrace<E: Element> {
    pub output: Tensor<E>,
    pub attentions: Vec<Tensor<E>>,
}

fn check_input<E: Element>(x: &Tensor<E>, p: &AttentionParams<E>, op: &'static str) -> Result<()> {
    let d = x.dims();
    if d.len() != 4 {
        return Err(Error::InvalidArg {
            op,
            msg: format!("expected [B, C, H, W], got {}", x.shape()),
        });
    }
    if d[1] != p.dim {
        return Err(Error::ShapeMismatch {
            op,
            lhs: format!("channels {}", d[1]),
            rhs: format!("attention dim {}", p.dim),
        });
    }
    Ok(())
}

/// Project `[.., N, C]` tokens: `tokens @ W + b`.
fn project<E: Element>(tokens: &Tensor<E>, w: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    tokens.matmul(w)?.add(b)
}

/// `[G, N, C] -> [G, heads, N, d]`
fn split_heads<E: Element>(t: &Tensor<E>, heads: usize) -> Result<Tensor<E>> {
    let d = t.dims();
    let (g, n, c) = (d[0], d[1], d[2]);
    t.reshape(&[g, n, heads, c / heads])?.permute(&[0, 2, 1, 3])
}

/// `[G, heads, N, d] -> [G, N, C]`
fn merge_heads<E: Element>(t: &Tensor<E>) -> Result<Tensor<E>> {
    let d = t.dims();
    let (g, h, n, hd) = (d[0], d[1], d[2], d[3]);
    t.permute(&[0, 2, 1, 3])?.reshape(&[g, n, h * hd])
}

/// Scaled dot-product attention over `[G, N, C]` token groups.
fn token_attention<E: Element>(
    tokens: &Tensor<E>,
    p: &AttentionParams<E>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let q = split_heads(&project(tokens, &p.wq, &p.bq)?, p.heads)?;
    let k = split_heads(&project(tokens, &p.wk, &p.bk)?, p.heads)?;
    let v = split_heads(&project(tokens, &p.wv, &p.bv)?, p.heads)?;
    let scale = E::from_f64(1.0 / (p.head_dim() as f64).sqrt());
    let scores = q.matmul(&k.permute(&[0, 1, 3, 2])?)?.mul_scalar(scale)?;
    let attn = scores.softmax(3)?;
    let ctx = merge_heads(&attn.matmul(&v)?)?;
    let out = project(&ctx, &p.wo, &p.bo)?;
    Ok((out, attn))
}

/// Window-based MSA over non-overlapping `M x M` windows. No information
/// crosses window boundaries.
pub fn window_msa<E: Element>(
    x: &Tensor<E>,
    p: &AttentionParams<E>,
    spec: &WindowSpec,
) -> Result<Tensor<E>> {
    Ok(window_msa_traced(x, p, spec)?.output)
}

pub fn window_msa_traced<E: Element>(
    x: &Tensor<E>,
    p: &AttentionParams<E>,
    spec: &WindowSpec,
) -> Result<MsaTrace<E>> {
    check_input(x, p, "window_msa")?;
    let d = x.dims();
    let (b, c, h, w) = (d[0], d[1], d[2], d[3]);
    if h != spec.height || w != spec.width {
        return Err(Error::ShapeMismatch {
            op: "window_msa",
            lhs: format!("input {h}x{w}"),
            rhs: format!("spec {}x{}", spec.height, spec.width),
        });
    }
    let m = spec.window;
    if !spec.divides() {
        return Err(Error::InvalidArg {
            op: "window_msa",
            msg: format!("window {m} must divide H={h} and W={w}"),
        });
    }
    let (nh, nw) = (h / m, w / m);
    let tokens = x
        .reshape(&[b, c, nh, m, nw, m])?
        .permute(&[0, 2, 4, 3, 5, 1])?
        .reshape(&[b * nh * nw, m * m, c])?;
    let (out, attn) = token_attention(&tokens, p)?;
    let output = out
        .reshape(&[b, nh, nw, m, m, c])?
        .permute(&[0, 5, 1, 3, 2, 4])?
        .reshape(&[b, c, h, w])?;
    Ok(MsaTrace {
        output,
        attentions: vec![attn],
    })
}

/// Global MSA: every token attends to every token (quadratic in HW).
pub fn global_msa<E: Element>(x: &Tensor<E>, p: &AttentionParams<E>) -> Result<Tensor<E>> {
    Ok(global_msa_traced(x, p)?.output)
}

pub fn global_msa_traced<E: Element>(
    x: &Tensor<E>,
    p: &AttentionParams<E>,
) -> Result<MsaTrace<E>> {
    check_input(x, p, "global_msa")?;
    let d = x.dims();
    let (b, c, h, w) = (d[0], d[1], d[2], d[3]);
    let tokens = x.reshape(&[b, c, h * w])?.permute(&[0, 2, 1])?;
    let (out, attn) = token_attention(&tokens, p)?;
    let output = out.permute(&[0, 2, 1])?.reshape(&[b, c, h, w])?;
    Ok(MsaTrace {
        output,
        attentions: vec![attn],
    })
}

/// Window MSA, depthwise-conv residual bridge, spatial shuffle, second window
/// MSA, spatial alignment. Builds long-range cross-window interactions at
/// linear cost.
pub fn shuffle_window_msa<E: Element>(
    x: &Tensor<E>,
    p1: &AttentionParams<E>,
    p2: &AttentionParams<E>,
    bridge: &DepthwiseBridge<E>,
    spec: &WindowSpec,
) -> Result<Tensor<E>> {
    Ok(shuffle_window_msa_traced(x, p1, p2, bridge, spec)?.output)
}

pub fn shuffle_window_msa_traced<E: Element>(
    x: &Tensor<E>,
    p1: &AttentionParams<E>,
    p2: &AttentionParams<E>,
    bridge: &DepthwiseBridge<E>,
    spec: &WindowSpec,
) -> Result<MsaTrace<E>> {
    let first = window_msa_traced(x, p1, spec)?;
    let bridged = first.output.add(&bridge.apply(&first.output)?)?;
    let shuffled = super::shuffle_bchw(&bridged, spec)?;
    let second = window_msa_traced(&shuffled, p2, spec)?;
    let output = super::alignment_bchw(&second.output, spec)?;
    let mut attentions = first.attentions;
    attentions.extend(second.attentions);
    Ok(MsaTrace { output, attentions })
}

/// Swin-style pair: window MSA, cyclic shift by half a window, window MSA,
/// shift back. Ablation-only variant.
pub fn shifted_window_msa<E: Element>(
    x: &Tensor<E>,
    p1: &AttentionParams<E>,
    p2: &AttentionParams<E>,
    spec: &WindowSpec,
) -> Result<Tensor<E>> {
    let shift = spec.window / 2;
    let first = window_msa(x, p1, spec)?;
    let rolled = cyclic_shift(&first, shift as isize, shift as isize)?;
    let second = window_msa(&rolled, p2, spec)?;
    cyclic_shift(&second, -(shift as isize), -(shift as isize))
}

/// Cyclic roll of the trailing two axes.
pub fn cyclic_shift<E: Element>(x: &Tensor<E>, dy: isize, dx: isize) -> Result<Tensor<E>> {
    let d = x.dims();
    if d.len() < 2 {
        return Err(Error::InvalidArg {
            op: "cyclic_shift",
            msg: format!("need rank >= 2, got {}", x.shape()),
        });
    }
    let (h, w) = (d[d.len() - 2], d[d.len() - 1]);
    let roll = |extent: usize, delta: isize| -> Vec<usize> {
        (0..extent)
            .map(|i| {
                let s = (i as isize - delta).rem_euclid(extent as isize);
                s as usize
            })
            .collect()
    };
    x.index_select(d.len() - 2, &roll(h, dy))?
        .index_select(d.len() - 1, &roll(w, dx))
}

/// Spectral MSA: each channel's flattened map is a token. Q/K/V come from
/// pointwise projections, descriptors are L2-normalized along HW, and the
/// `C x C` attention uses a per-head learnable temperature. Cost is linear
/// in HW.
pub fn spectral_msa<E: Element>(x: &Tensor<E>, p: &AttentionParams<E>) -> Result<Tensor<E>> {
    Ok(spectral_msa_traced(x, x, p)?.output)
}

/// Cross form: queries from `q_src`, keys and values from `kv_src`.
/// With `kv_src == q_src` this is self-attention.
pub fn spectral_msa_cross<E: Element>(
    q_src: &Tensor<E>,
    kv_src: &Tensor<E>,
    p: &AttentionParams<E>,
) -> Result<Tensor<E>> {
    Ok(spectral_msa_traced(q_src, kv_src, p)?.output)
}

pub fn spectral_msa_traced<E: Element>(
    q_src: &Tensor<E>,
    kv_src: &Tensor<E>,
    p: &AttentionParams<E>,
) -> Result<MsaTrace<E>> {
    spectral_msa_qkv_traced(q_src, kv_src, kv_src, p)
}

/// Fully general source routing: queries, keys, and values may each come
/// from a different map of identical shape.
pub fn spectral_msa_qkv_traced<E: Element>(
    q_src: &Tensor<E>,
    k_src: &Tensor<E>,
    v_src: &Tensor<E>,
    p: &AttentionParams<E>,
) -> Result<MsaTrace<E>> {
    check_input(q_src, p, "spectral_msa")?;
    if q_src.dims() != k_src.dims() || q_src.dims() != v_src.dims() {
        return Err(Error::ShapeMismatch {
            op: "spectral_msa",
            lhs: q_src.shape().to_string(),
            rhs: format!("{} / {}", k_src.shape(), v_src.shape()),
        });
    }
    let d = q_src.dims();
    let (b, c, h, w) = (d[0], d[1], d[2], d[3]);
    let n = h * w;
    let heads = p.heads;
    let hd = p.head_dim();

    // pointwise projections keep spatial-permutation equivariance exact
    let to_tokens = |t: &Tensor<E>| t.reshape(&[b, c, n])?.permute(&[0, 2, 1]);
    let q = project(&to_tokens(q_src)?, &p.wq, &p.bq)?;
    let k = project(&to_tokens(k_src)?, &p.wk, &p.bk)?;
    let v = project(&to_tokens(v_src)?, &p.wv, &p.bv)?;

    // [B, N, C] -> [B, heads, d, N]: channel descriptors per head
    let to_desc = |t: &Tensor<E>| t.permute(&[0, 2, 1])?.reshape(&[b, heads, hd, n]);
    let qd = l2_normalize_last(&to_desc(&q)?)?;
    let kd = l2_normalize_last(&to_desc(&k)?)?;
    let vd = to_desc(&v)?;

    let scores = qd.matmul(&kd.permute(&[0, 1, 3, 2])?)?;
    let tau = p
        .temperature
        .as_ref()
        .ok_or_else(|| Error::Config("spectral MSA requires temperature parameters".into()))?;
    let scaled = scores.mul(&tau.reshape(&[1, heads, 1, 1])?)?;
    let attn = scaled.softmax(3)?;
    let ctx = attn.matmul(&vd)?.reshape(&[b, c, n])?;
    let out = project(&ctx.permute(&[0, 2, 1])?, &p.wo, &p.bo)?;
    let output = out.permute(&[0, 2, 1])?.reshape(&[b, c, h, w])?;
    Ok(MsaTrace {
        output,
        attentions: vec![attn],
    })
}

fn l2_normalize_last<E: Element>(t: &Tensor<E>) -> Result<Tensor<E>> {
    let norm = t
        .mul(t)?
        .sum_axis(t.rank() - 1, true)?
        .add_scalar(E::from_f64(1e-12))?
        .sqrt()?;
    t.div(&norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_input(seed: u64, dims: &[usize]) -> Tensor<f64> {
        let mut r = rng(seed);
        let n: usize = dims.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
        Tensor::from_vec(data, dims).unwrap()
    }

    #[test]
    fn zeroed_qk_identity_v_averages_each_window() {
        // softmax of zeros is uniform: output token = mean of window tokens
        let mut r = rng(0);
        let mut p = AttentionParams::<f64>::new_spatial(&mut r, 2, 1).unwrap();
        p.wq = Tensor::zeros(&[2, 2]).unwrap().with_requires_grad();
        p.wk = Tensor::zeros(&[2, 2]).unwrap().with_requires_grad();
        let eye = Tensor::from_vec(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        p.wv = eye.clone().with_requires_grad();
        p.wo = eye.with_requires_grad();
        let x = random_input(7, &[1, 2, 2, 2]);
        let spec = WindowSpec::new(2, 2, 2).unwrap();
        let y = window_msa(&x, &p, &spec).unwrap();
        for c in 0..2 {
            let mean: f64 = (0..4).map(|i| x.data()[c * 4 + i]).sum::<f64>() / 4.0;
            for i in 0..4 {
                assert!((y.data()[c * 4 + i] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_window_equals_global_attention() {
        let mut r = rng(3);
        let p = AttentionParams::<f64>::new_spatial(&mut r, 4, 2).unwrap();
        let x = random_input(11, &[1, 4, 4, 4]);
        let spec = WindowSpec::new(4, 4, 4).unwrap();
        let windowed = window_msa(&x, &p, &spec).unwrap();
        let global = global_msa(&x, &p).unwrap();
        for (a, b) in windowed.to_vec().iter().zip(global.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_window_independence() {
        // perturbing a token in one window leaves other windows unchanged
        let mut r = rng(5);
        let p = AttentionParams::<f64>::new_spatial(&mut r, 4, 2).unwrap();
        let spec = WindowSpec::new(2, 4, 4).unwrap();
        let x = random_input(13, &[1, 4, 4, 4]);
        let mut bumped = x.to_vec();
        bumped[0] += 10.0; // channel 0, pixel (0,0): window A
        let xb = Tensor::from_vec(bumped, &[1, 4, 4, 4]).unwrap();
        let ya = window_msa(&x, &p, &spec).unwrap();
        let yb = window_msa(&xb, &p, &spec).unwrap();
        for c in 0..4 {
            for i in 0..4 {
                for j in 0..4 {
                    let same_window = i < 2 && j < 2;
                    let da = (ya.at(&[0, c, i, j]) - yb.at(&[0, c, i, j])).abs();
                    if !same_window {
                        assert!(da < 1e-12, "window leak at c={c} i={i} j={j}: {da}");
                    }
                }
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        for seed in 0..5 {
            let mut r = rng(seed);
            let p = AttentionParams::<f64>::new_spatial(&mut r, 4, 2).unwrap();
            let x = random_input(100 + seed, &[1, 4, 4, 4]);
            let spec = WindowSpec::new(2, 4, 4).unwrap();
            let trace = window_msa_traced(&x, &p, &spec).unwrap();
            for attn in &trace.attentions {
                let sums = attn.sum_axis(attn.rank() - 1, false).unwrap();
                for s in sums.to_vec() {
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn shuffle_window_shape_preserved() {
        let mut r = rng(9);
        let p1 = AttentionParams::<f64>::new_spatial(&mut r, 8, 2).unwrap();
        let p2 = AttentionParams::<f64>::new_spatial(&mut r, 8, 2).unwrap();
        let bridge = DepthwiseBridge::new(&mut r, 8, 2);
        let spec = WindowSpec::new(2, 8, 8).unwrap();
        let x = random_input(21, &[1, 8, 8, 8]);
        let y = shuffle_window_msa(&x, &p1, &p2, &bridge, &spec).unwrap();
        assert_eq!(y.dims(), &[1, 8, 8, 8]);
    }

    #[test]
    fn shuffle_window_spans_multiple_windows() {
        // nonzero input-gradient support beyond the query window on 8x8, M=2
        let mut r = rng(17);
        let p1 = AttentionParams::<f64>::new_spatial(&mut r, 2, 1).unwrap();
        let p2 = AttentionParams::<f64>::new_spatial(&mut r, 2, 1).unwrap();
        let bridge = DepthwiseBridge::new(&mut r, 2, 2);
        let spec = WindowSpec::new(2, 8, 8).unwrap();
        let x = random_input(23, &[1, 2, 8, 8]).with_requires_grad();
        let y = shuffle_window_msa(&x, &p1, &p2, &bridge, &spec).unwrap();
        // probe output token at (0,0): sum over channels
        let probe = y
            .narrow(2, 0, 1)
            .unwrap()
            .narrow(3, 0, 1)
            .unwrap()
            .sum_all()
            .unwrap();
        let grads = probe.backward().unwrap();
        let g = grads.get(&x).unwrap();
        let mut windows = std::collections::HashSet::new();
        for c in 0..2 {
            for i in 0..8 {
                for j in 0..8 {
                    if g[(c * 8 + i) * 8 + j].abs() > 1e-12 {
                        windows.insert((i / 2, j / 2));
                    }
                }
            }
        }
        assert!(windows.len() >= 2, "receptive field spans {} windows", windows.len());
    }

    #[test]
    fn spectral_cross_with_itself_is_self_attention() {
        let mut r = rng(31);
        let p = AttentionParams::<f64>::new_spectral(&mut r, 4, 2).unwrap();
        let x = random_input(37, &[1, 4, 3, 3]);
        let a = spectral_msa(&x, &p).unwrap();
        let b = spectral_msa_cross(&x, &x, &p).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn spectral_commutes_with_pixel_permutation() {
        let mut r = rng(41);
        let p = AttentionParams::<f64>::new_spectral(&mut r, 4, 2).unwrap();
        let x = random_input(43, &[1, 4, 3, 3]);
        // arbitrary spatial permutation applied to all channels
        let perm: Vec<usize> = vec![4, 0, 7, 2, 8, 1, 6, 3, 5];
        let permute = |t: &Tensor<f64>| {
            t.reshape(&[1, 4, 9])
                .unwrap()
                .index_select(2, &perm)
                .unwrap()
                .reshape(&[1, 4, 3, 3])
                .unwrap()
        };
        let lhs = spectral_msa(&permute(&x), &p).unwrap();
        let rhs = permute(&spectral_msa(&x, &p).unwrap());
        for (a, b) in lhs.to_vec().iter().zip(rhs.to_vec()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn spectral_single_channel_is_projected_v() {
        let mut r = rng(47);
        let p = AttentionParams::<f64>::new_spectral(&mut r, 1, 1).unwrap();
        let x = random_input(53, &[1, 1, 4, 4]);
        let trace = spectral_msa_traced(&x, &x, &p).unwrap();
        // attention over a single channel token is exactly [[1]]
        assert_eq!(trace.attentions[0].numel(), 1);
        assert!((trace.attentions[0].data()[0] - 1.0).abs() < 1e-12);
        let v = x
            .reshape(&[1, 1, 16])
            .unwrap()
            .permute(&[0, 2, 1])
            .unwrap()
            .matmul(&p.wv)
            .unwrap()
            .add(&p.bv)
            .unwrap()
            .matmul(&p.wo)
            .unwrap()
            .add(&p.bo)
            .unwrap();
        for (a, b) in trace.output.to_vec().iter().zip(v.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn window_msa_rejects_nondividing_window() {
        let mut r = rng(59);
        let p = AttentionParams::<f64>::new_spatial(&mut r, 2, 1).unwrap();
        let spec = WindowSpec::new(3, 4, 4).unwrap();
        let x = random_input(61, &[1, 2, 4, 4]);
        assert!(window_msa(&x, &p, &spec).is_err());
    }

    #[test]
    fn cyclic_shift_round_trips() {
        let x = random_input(67, &[1, 2, 4, 4]);
        let y = cyclic_shift(&cyclic_shift(&x, 1, 2).unwrap(), -1, -2).unwrap();
        assert_eq!(x.to_vec(), y.to_vec());
    }
}
