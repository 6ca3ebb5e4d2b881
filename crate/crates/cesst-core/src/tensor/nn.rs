//! Network kernels: softmax, layer norm, convolution, padding, resizing.

use std::sync::Arc;

use super::{Element, Tensor, TensorShape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample; pad must be < extent.
    Reflect,
}

impl<E: Element> Tensor<E> {
    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<E>> {
        let dims = self.dims();
        if axis >= dims.len() {
            return Err(Error::InvalidArg {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {}", self.shape()),
            });
        }
        let outer: usize = dims[..axis].iter().product();
        let len = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        let x = self.data();
        let mut out = vec![E::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut maxv = x[base];
                for l in 1..len {
                    let v = x[base + l * inner];
                    if v > maxv {
                        maxv = v;
                    }
                }
                let mut sum = E::zero();
                for l in 0..len {
                    let e = (x[base + l * inner] - maxv).exp();
                    out[base + l * inner] = e;
                    sum += e;
                }
                let inv = E::one() / sum;
                for l in 0..len {
                    out[base + l * inner] *= inv;
                }
            }
        }
        let y = Arc::new(out.clone());
        let backward = Box::new(move |grad: &[E]| {
            // dx = y * (dy - sum_axis(dy * y))
            let mut g = vec![E::zero(); grad.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = E::zero();
                    for l in 0..len {
                        let k = base + l * inner;
                        dot += grad[k] * y[k];
                    }
                    for l in 0..len {
                        let k = base + l * inner;
                        g[k] = y[k] * (grad[k] - dot);
                    }
                }
            }
            vec![Some(g)]
        });
        Tensor::from_op(out, self.shape().clone(), vec![self.clone()], backward, "softmax")
    }

    /// Layer normalization along a single axis with affine parameters of that
    /// axis' extent. Pre-affine output has zero mean and unit variance.
    pub fn layer_norm(
        &self,
        axis: usize,
        gamma: &Tensor<E>,
        beta: &Tensor<E>,
        eps: f64,
    ) -> Result<Tensor<E>> {
        let dims = self.dims();
        if axis >= dims.len() {
            return Err(Error::InvalidArg {
                op: "layer_norm",
                msg: format!("axis {axis} out of range for shape {}", self.shape()),
            });
        }
        let len = dims[axis];
        if gamma.numel() != len || beta.numel() != len {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: format!("normalized axis extent {len}"),
                rhs: format!("gamma {} / beta {}", gamma.shape(), beta.shape()),
            });
        }
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product();
        let eps = E::from_f64(eps);
        let x = self.data();
        let (g, b) = (gamma.data(), beta.data());
        let mut out = vec![E::zero(); x.len()];
        let mut xhat = vec![E::zero(); x.len()];
        let mut inv_std = vec![E::zero(); outer * inner];
        let n = E::from_f64(len as f64);
        // channel-outer loops keep the inner stride contiguous
        let mut mean = vec![E::zero(); inner];
        let mut var = vec![E::zero(); inner];
        for o in 0..outer {
            let block = &x[o * len * inner..(o + 1) * len * inner];
            mean.fill(E::zero());
            for l in 0..len {
                for (m, &v) in mean.iter_mut().zip(&block[l * inner..(l + 1) * inner]) {
                    *m += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= n;
            }
            var.fill(E::zero());
            for l in 0..len {
                for ((vv, &v), &m) in var
                    .iter_mut()
                    .zip(&block[l * inner..(l + 1) * inner])
                    .zip(&mean)
                {
                    let d = v - m;
                    *vv += d * d;
                }
            }
            let inv_row = &mut inv_std[o * inner..(o + 1) * inner];
            for (iv, &vv) in inv_row.iter_mut().zip(&var) {
                *iv = E::one() / (vv / n + eps).sqrt();
            }
            for l in 0..len {
                let src = &block[l * inner..(l + 1) * inner];
                let dst_h = &mut xhat[o * len * inner + l * inner..o * len * inner + (l + 1) * inner];
                let dst_o = &mut out[o * len * inner + l * inner..o * len * inner + (l + 1) * inner];
                let (gl, bl) = (g[l], b[l]);
                for i in 0..inner {
                    let xh = (src[i] - mean[i]) * inv_row[i];
                    dst_h[i] = xh;
                    dst_o[i] = gl * xh + bl;
                }
            }
        }
        let xhat = Arc::new(xhat);
        let inv_std = Arc::new(inv_std);
        let ga = gamma.data_arc();
        let backward = Box::new(move |grad: &[E]| {
            let mut dx = vec![E::zero(); grad.len()];
            let mut dgamma = vec![E::zero(); len];
            let mut dbeta = vec![E::zero(); len];
            let mut mean_dyh = vec![E::zero(); inner];
            let mut mean_dyh_xh = vec![E::zero(); inner];
            for o in 0..outer {
                let base = o * len * inner;
                mean_dyh.fill(E::zero());
                mean_dyh_xh.fill(E::zero());
                for l in 0..len {
                    let gl = ga[l];
                    let grow = &grad[base + l * inner..base + (l + 1) * inner];
                    let hrow = &xhat[base + l * inner..base + (l + 1) * inner];
                    let mut dg = E::zero();
                    let mut db = E::zero();
                    for i in 0..inner {
                        let dyh = grow[i] * gl;
                        mean_dyh[i] += dyh;
                        mean_dyh_xh[i] += dyh * hrow[i];
                        dg += grow[i] * hrow[i];
                        db += grow[i];
                    }
                    dgamma[l] += dg;
                    dbeta[l] += db;
                }
                for i in 0..inner {
                    mean_dyh[i] /= n;
                    mean_dyh_xh[i] /= n;
                }
                let inv_row = &inv_std[o * inner..(o + 1) * inner];
                for l in 0..len {
                    let gl = ga[l];
                    let grow = &grad[base + l * inner..base + (l + 1) * inner];
                    let hrow = &xhat[base + l * inner..base + (l + 1) * inner];
                    let drow = &mut dx[base + l * inner..base + (l + 1) * inner];
                    for i in 0..inner {
                        let dyh = grow[i] * gl;
                        drow[i] = inv_row[i] * (dyh - mean_dyh[i] - hrow[i] * mean_dyh_xh[i]);
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        });
        Tensor::from_op(
            out,
            self.shape().clone(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            backward,
            "layer_norm",
        )
    }

    /// 2D cross-correlation over `[B, Cin, H, W]` with weights
    /// `[Cout, Cin/groups, kh, kw]`, symmetric zero padding.
    pub fn conv2d(
        &self,
        weight: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor<E>> {
        let xd = self.dims();
        let wd = weight.dims();
        if xd.len() != 4 || wd.len() != 4 {
            return Err(Error::InvalidArg {
                op: "conv2d",
                msg: format!("expected rank-4 input/weight, got {} / {}", self.shape(), weight.shape()),
            });
        }
        let (bsz, cin, h, w) = (xd[0], xd[1], xd[2], xd[3]);
        let (cout, cin_g, kh, kw) = (wd[0], wd[1], wd[2], wd[3]);
        if groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return Err(Error::InvalidArg {
                op: "conv2d",
                msg: format!(
                    "invalid group/channel combination: cin={cin}, cout={cout}, groups={groups}, weight cin/groups={cin_g}"
                ),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArg {
                op: "conv2d",
                msg: "stride must be >= 1".into(),
            });
        }
        if let Some(bias) = bias {
            if bias.numel() != cout {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: format!("bias {}", bias.shape()),
                    rhs: format!("cout {cout}"),
                });
            }
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::InvalidArg {
                op: "conv2d",
                msg: format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * padding, w + 2 * padding),
            });
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let cg_out = cout / groups;

        let x = self.data();
        let wt = weight.data();
        let mut out = vec![E::zero(); bsz * cout * ho * wo];
        if let Some(bias) = bias {
            let bv = bias.data();
            for b in 0..bsz {
                for co in 0..cout {
                    let base = (b * cout + co) * ho * wo;
                    out[base..base + ho * wo].fill(bv[co]);
                }
            }
        }
        conv2d_forward(
            x, wt, &mut out, bsz, cin, h, w, cout, cg_out, kh, kw, stride, padding, groups, ho, wo,
        );

        let xa = self.data_arc();
        let wa = weight.data_arc();
        let has_bias = bias.is_some();
        let (nx, nw) = (self.numel(), weight.numel());
        let backward = Box::new(move |grad: &[E]| {
            let mut dx = vec![E::zero(); nx];
            let mut dw = vec![E::zero(); nw];
            conv2d_backward(
                &xa, &wa, grad, &mut dx, &mut dw, bsz, cin, h, w, cout, cg_out, kh, kw, stride,
                padding, groups, ho, wo,
            );
            let mut grads = vec![Some(dx), Some(dw)];
            if has_bias {
                let mut db = vec![E::zero(); cout];
                for b in 0..bsz {
                    for co in 0..cout {
                        let base = (b * cout + co) * ho * wo;
                        for g in &grad[base..base + ho * wo] {
                            db[co] += *g;
                        }
                    }
                }
                grads.push(Some(db));
            }
            grads
        });
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(bias) = bias {
            parents.push(bias.clone());
        }
        Tensor::from_op(
            out,
            TensorShape::new(&[bsz, cout, ho, wo])?,
            parents,
            backward,
            "conv2d",
        )
    }

    /// Pad the trailing two axes by `(top, bottom, left, right)`.
    pub fn pad2d(&self, pad: [usize; 4], mode: PadMode) -> Result<Tensor<E>> {
        let dims = self.dims();
        if dims.len() < 2 {
            return Err(Error::InvalidArg {
                op: "pad2d",
                msg: format!("need rank >= 2, got {}", self.shape()),
            });
        }
        let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
        let [top, bottom, left, right] = pad;
        if mode == PadMode::Reflect {
            let max_h = h - 1;
            let max_w = w - 1;
            if top > max_h || bottom > max_h || left > max_w || right > max_w {
                return Err(Error::InvalidArg {
                    op: "pad2d",
                    msg: format!("reflect pad {pad:?} too large for {h}x{w}"),
                });
            }
        }
        let (ho, wo) = (h + top + bottom, w + left + right);
        let planes: usize = dims[..dims.len() - 2].iter().product();
        let x = self.data();
        let mut out = vec![E::zero(); planes * ho * wo];
        let map = move |o: usize, pad_before: usize, extent: usize| -> Option<usize> {
            let s = o as isize - pad_before as isize;
            match mode {
                PadMode::Zero => {
                    if s < 0 || s >= extent as isize {
                        None
                    } else {
                        Some(s as usize)
                    }
                }
                PadMode::Reflect => {
                    let mut s = s;
                    if s < 0 {
                        s = -s;
                    }
                    if s >= extent as isize {
                        s = 2 * (extent as isize - 1) - s;
                    }
                    Some(s as usize)
                }
            }
        };
        for p in 0..planes {
            let src_plane = &x[p * h * w..(p + 1) * h * w];
            let dst_plane = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for oy in 0..ho {
                let Some(sy) = map(oy, top, h) else { continue };
                for ox in 0..wo {
                    let Some(sx) = map(ox, left, w) else { continue };
                    dst_plane[oy * wo + ox] = src_plane[sy * w + sx];
                }
            }
        }
        let mut out_dims = dims.to_vec();
        let r = out_dims.len();
        out_dims[r - 2] = ho;
        out_dims[r - 1] = wo;
        let n_in = self.numel();
        let backward = Box::new(move |grad: &[E]| {
            let mut g = vec![E::zero(); n_in];
            for p in 0..planes {
                let src_plane = &mut g[p * h * w..(p + 1) * h * w];
                let grad_plane = &grad[p * ho * wo..(p + 1) * ho * wo];
                for oy in 0..ho {
                    let Some(sy) = map(oy, top, h) else { continue };
                    for ox in 0..wo {
                        let Some(sx) = map(ox, left, w) else { continue };
                        src_plane[sy * w + sx] += grad_plane[oy * wo + ox];
                    }
                }
            }
            vec![Some(g)]
        });
        Tensor::from_op(
            out,
            TensorShape::new(&out_dims)?,
            vec![self.clone()],
            backward,
            "pad2d",
        )
    }

    /// Nearest-neighbor resize of the trailing two axes by a positive factor.
    pub fn resize_nearest(&self, scale: f64) -> Result<Tensor<E>> {
        let (h, w, planes) = self.plane_geometry("resize_nearest")?;
        let (ho, wo) = scaled_extent(h, w, scale, "resize_nearest")?;
        let src_y: Vec<usize> = (0..ho).map(|i| nearest_src(i, scale, h)).collect();
        let src_x: Vec<usize> = (0..wo).map(|i| nearest_src(i, scale, w)).collect();
        let x = self.data();
        let mut out = vec![E::zero(); planes * ho * wo];
        for p in 0..planes {
            let src_plane = &x[p * h * w..(p + 1) * h * w];
            let dst_plane = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for oy in 0..ho {
                let row = &src_plane[src_y[oy] * w..(src_y[oy] + 1) * w];
                for ox in 0..wo {
                    dst_plane[oy * wo + ox] = row[src_x[ox]];
                }
            }
        }
        let n_in = self.numel();
        let (sy, sx) = (src_y, src_x);
        let backward = Box::new(move |grad: &[E]| {
            let mut g = vec![E::zero(); n_in];
            for p in 0..planes {
                let src_plane = &mut g[p * h * w..(p + 1) * h * w];
                let grad_plane = &grad[p * ho * wo..(p + 1) * ho * wo];
                for oy in 0..ho {
                    for ox in 0..wo {
                        src_plane[sy[oy] * w + sx[ox]] += grad_plane[oy * wo + ox];
                    }
                }
            }
            vec![Some(g)]
        });
        let out_dims = self.resized_dims(ho, wo);
        Tensor::from_op(
            out,
            TensorShape::new(&out_dims)?,
            vec![self.clone()],
            backward,
            "resize_nearest",
        )
    }

    /// Bilinear resize of the trailing two axes, half-pixel centers.
    pub fn resize_bilinear(&self, scale: f64) -> Result<Tensor<E>> {
        let (h, w, planes) = self.plane_geometry("resize_bilinear")?;
        let (ho, wo) = scaled_extent(h, w, scale, "resize_bilinear")?;
        let taps_y = bilinear_taps(ho, h, scale);
        let taps_x = bilinear_taps(wo, w, scale);
        let x = self.data();
        let mut out = vec![E::zero(); planes * ho * wo];
        for p in 0..planes {
            let src_plane = &x[p * h * w..(p + 1) * h * w];
            let dst_plane = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for (oy, &(y0, y1, ty)) in taps_y.iter().enumerate() {
                for (ox, &(x0, x1, tx)) in taps_x.iter().enumerate() {
                    let ty = E::from_f64(ty);
                    let tx = E::from_f64(tx);
                    let a = src_plane[y0 * w + x0];
                    let b = src_plane[y0 * w + x1];
                    let c = src_plane[y1 * w + x0];
                    let d = src_plane[y1 * w + x1];
                    let top = a + (b - a) * tx;
                    let bot = c + (d - c) * tx;
                    dst_plane[oy * wo + ox] = top + (bot - top) * ty;
                }
            }
        }
        let n_in = self.numel();
        let backward = Box::new(move |grad: &[E]| {
            let mut g = vec![E::zero(); n_in];
            for p in 0..planes {
                let src_plane = &mut g[p * h * w..(p + 1) * h * w];
                let grad_plane = &grad[p * ho * wo..(p + 1) * ho * wo];
                for (oy, &(y0, y1, ty)) in taps_y.iter().enumerate() {
                    for (ox, &(x0, x1, tx)) in taps_x.iter().enumerate() {
                        let gv = grad_plane[oy * wo + ox];
                        let (ty, tx) = (E::from_f64(ty), E::from_f64(tx));
                        let one = E::one();
                        src_plane[y0 * w + x0] += gv * (one - ty) * (one - tx);
                        src_plane[y0 * w + x1] += gv * (one - ty) * tx;
                        src_plane[y1 * w + x0] += gv * ty * (one - tx);
                        src_plane[y1 * w + x1] += gv * ty * tx;
                    }
                }
            }
            vec![Some(g)]
        });
        let out_dims = self.resized_dims(ho, wo);
        Tensor::from_op(
            out,
            TensorShape::new(&out_dims)?,
            vec![self.clone()],
            backward,
            "resize_bilinear",
        )
    }

    fn plane_geometry(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        let dims = self.dims();
        if dims.len() < 2 {
            return Err(Error::InvalidArg {
                op,
                msg: format!("need rank >= 2, got {}", self.shape()),
            });
        }
        let h = dims[dims.len() - 2];
        let w = dims[dims.len() - 1];
        let planes: usize = dims[..dims.len() - 2].iter().product();
        Ok((h, w, planes))
    }

    fn resized_dims(&self, ho: usize, wo: usize) -> Vec<usize> {
        let mut out = self.dims().to_vec();
        let r = out.len();
        out[r - 2] = ho;
        out[r - 1] = wo;
        out
    }
}

fn scaled_extent(h: usize, w: usize, scale: f64, op: &'static str) -> Result<(usize, usize)> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArg {
            op,
            msg: format!("scale must be positive, got {scale}"),
        });
    }
    let ho = (h as f64 * scale).round() as usize;
    let wo = (w as f64 * scale).round() as usize;
    if ho == 0 || wo == 0 {
        return Err(Error::InvalidArg {
            op,
            msg: format!("output extent < 1 for {h}x{w} at scale {scale}"),
        });
    }
    Ok((ho, wo))
}

fn nearest_src(i: usize, scale: f64, extent: usize) -> usize {
    let s = ((i as f64 + 0.5) / scale).floor();
    (s.max(0.0) as usize).min(extent - 1)
}

/// Per output index: (floor tap, ceil tap, interpolation weight).
fn bilinear_taps(out: usize, extent: usize, scale: f64) -> Vec<(usize, usize, f64)> {
    (0..out)
        .map(|i| {
            let src = (i as f64 + 0.5) / scale - 0.5;
            let clamped = src.clamp(0.0, (extent - 1) as f64);
            let i0 = clamped.floor() as usize;
            let i1 = (i0 + 1).min(extent - 1);
            (i0, i1, clamped - i0 as f64)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward<E: Element>(
    x: &[E],
    wt: &[E],
    out: &mut [E],
    bsz: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cg_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    ho: usize,
    wo: usize,
) {
    let cg_in = cin / groups;
    for b in 0..bsz {
        for g in 0..groups {
            for co_l in 0..cg_out {
                let co = g * cg_out + co_l;
                let out_map = &mut out[((b * cout) + co) * ho * wo..((b * cout) + co + 1) * ho * wo];
                for ci_l in 0..cg_in {
                    let ci = g * cg_in + ci_l;
                    let x_map = &x[((b * cin) + ci) * h * w..((b * cin) + ci + 1) * h * w];
                    let w_base = ((co * cg_in) + ci_l) * kh * kw;
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let wv = wt[w_base + ki * kw + kj];
                            if wv == E::zero() {
                                continue;
                            }
                            for i in 0..ho {
                                let y = (i * stride + ki) as isize - padding as isize;
                                if y < 0 || y >= h as isize {
                                    continue;
                                }
                                let x_row = &x_map[(y as usize) * w..(y as usize + 1) * w];
                                let out_row = &mut out_map[i * wo..(i + 1) * wo];
                                if stride == 1 {
                                    // x index = j + kj - padding; clip to [0, w)
                                    let j0 = padding.saturating_sub(kj);
                                    let j1 = ((w + padding).saturating_sub(kj)).min(wo);
                                    if j0 >= j1 {
                                        continue;
                                    }
                                    let off = j0 + kj - padding;
                                    for (ov, &xv) in out_row[j0..j1].iter_mut().zip(&x_row[off..off + (j1 - j0)]) {
                                        *ov += wv * xv;
                                    }
                                } else {
                                    for j in 0..wo {
                                        let xj = (j * stride + kj) as isize - padding as isize;
                                        if xj < 0 || xj >= w as isize {
                                            continue;
                                        }
                                        out_row[j] += wv * x_row[xj as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<E: Element>(
    x: &[E],
    wt: &[E],
    grad: &[E],
    dx: &mut [E],
    dw: &mut [E],
    bsz: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cg_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    ho: usize,
    wo: usize,
) {
    let cg_in = cin / groups;
    for b in 0..bsz {
        for g in 0..groups {
            for co_l in 0..cg_out {
                let co = g * cg_out + co_l;
                let g_map = &grad[((b * cout) + co) * ho * wo..((b * cout) + co + 1) * ho * wo];
                for ci_l in 0..cg_in {
                    let ci = g * cg_in + ci_l;
                    let x_map = &x[((b * cin) + ci) * h * w..((b * cin) + ci + 1) * h * w];
                    let dx_map = &mut dx[((b * cin) + ci) * h * w..((b * cin) + ci + 1) * h * w];
                    let w_base = ((co * cg_in) + ci_l) * kh * kw;
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let wv = wt[w_base + ki * kw + kj];
                            let mut wacc = E::zero();
                            for i in 0..ho {
                                let y = (i * stride + ki) as isize - padding as isize;
                                if y < 0 || y >= h as isize {
                                    continue;
                                }
                                let y = y as usize;
                                let g_row = &g_map[i * wo..(i + 1) * wo];
                                if stride == 1 {
                                    let j0 = padding.saturating_sub(kj);
                                    let j1 = ((w + padding).saturating_sub(kj)).min(wo);
                                    if j0 >= j1 {
                                        continue;
                                    }
                                    let off = j0 + kj - padding;
                                    let x_row = &x_map[y * w + off..y * w + off + (j1 - j0)];
                                    let dx_row = &mut dx_map[y * w + off..y * w + off + (j1 - j0)];
                                    for ((&gv, &xv), dxv) in
                                        g_row[j0..j1].iter().zip(x_row).zip(dx_row.iter_mut())
                                    {
                                        wacc += gv * xv;
                                        *dxv += wv * gv;
                                    }
                                } else {
                                    for j in 0..wo {
                                        let xj = (j * stride + kj) as isize - padding as isize;
                                        if xj < 0 || xj >= w as isize {
                                            continue;
                                        }
                                        let gv = g_row[j];
                                        wacc += gv * x_map[y * w + xj as usize];
                                        dx_map[y * w + xj as usize] += wv * gv;
                                    }
                                }
                            }
                            dw[w_base + ki * kw + kj] += wacc;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], dims: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(data.to_vec(), dims).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let x = t(&[0.0, 0.0], &[2]);
        let y = x.softmax(0).unwrap();
        assert_eq!(y.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        for c in [-3.0, 0.0, 1234.5] {
            let x = t(&[c, c, c], &[3]);
            let y = x.softmax(0).unwrap();
            for v in y.to_vec() {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_closed_form() {
        // [0, ln 3] -> [0.25, 0.75]
        let x = t(&[0.0, 3.0f64.ln()], &[2]);
        let y = x.softmax(0).unwrap();
        assert!((y.to_vec()[0] - 0.25).abs() < 1e-12);
        assert!((y.to_vec()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_at_large_magnitudes() {
        let x = t(&[1e4, -1e4, 5e3, 0.0], &[4]);
        let y = x.softmax(0).unwrap();
        let s: f64 = y.to_vec().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_constant_vector_clamps_to_zero() {
        let x = t(&[5.0, 5.0, 5.0], &[3]);
        let gamma = Tensor::ones(&[3]).unwrap();
        let beta = Tensor::zeros(&[3]).unwrap();
        let y = x.layer_norm(0, &gamma, &beta, 1e-5).unwrap();
        for v in y.to_vec() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_already_normalized_is_identity() {
        let x = t(&[1.0, -1.0], &[2]);
        let gamma = Tensor::ones(&[2]).unwrap();
        let beta = Tensor::zeros(&[2]).unwrap();
        let y = x.layer_norm(0, &gamma, &beta, 1e-12).unwrap();
        assert!((y.to_vec()[0] - 1.0).abs() < 1e-6);
        assert!((y.to_vec()[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_affine_collapse() {
        let x = t(&[0.3, 9.4, -2.0], &[3]);
        let gamma = Tensor::zeros(&[3]).unwrap();
        let beta = Tensor::full(&[3], 5.0).unwrap();
        let y = x.layer_norm(0, &gamma, &beta, 1e-5).unwrap();
        for v in y.to_vec() {
            assert_eq!(v, 5.0);
        }
    }

    #[test]
    fn conv2d_identity_kernel_1x1() {
        let x = t(&(0..18).map(|v| v as f64).collect::<Vec<_>>(), &[1, 2, 3, 3]);
        // per-channel passthrough: w[co][ci] = delta(co, ci)
        let w = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2, 1, 1]);
        let y = x.conv2d(&w, None, 1, 0, 1).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn conv2d_ones_kernel_center_counts_taps() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]).unwrap();
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]).unwrap();
        let y = x.conv2d(&w, None, 1, 1, 1).unwrap();
        assert_eq!(y.dims(), &[1, 1, 3, 3]);
        assert_eq!(y.at(&[0, 0, 1, 1]), 9.0);
        // corner touches only 4 taps
        assert_eq!(y.at(&[0, 0, 0, 0]), 4.0);
    }

    #[test]
    fn conv2d_depthwise_identity() {
        let x = t(&(0..32).map(|v| v as f64).collect::<Vec<_>>(), &[1, 2, 4, 4]);
        // groups = cin, 1x1 identity kernel per channel
        let w = t(&[1.0, 1.0], &[2, 1, 1, 1]);
        let y = x.conv2d(&w, None, 1, 0, 2).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn conv2d_depthwise_matches_per_channel_conv() {
        // groups=cin equals independent per-channel conv2d on 2x4x5x5
        let mut rng = 1234u64;
        let mut next = move || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let x_data: Vec<f64> = (0..2 * 4 * 5 * 5).map(|_| next()).collect();
        let w_data: Vec<f64> = (0..4 * 9).map(|_| next()).collect();
        let x = t(&x_data, &[2, 4, 5, 5]);
        let w = t(&w_data, &[4, 1, 3, 3]);
        let fused = x.conv2d(&w, None, 1, 1, 4).unwrap();
        for c in 0..4 {
            let xc = x.narrow(1, c, 1).unwrap();
            let wc = w.narrow(0, c, 1).unwrap();
            let yc = xc.conv2d(&wc, None, 1, 1, 1).unwrap();
            let full = fused.narrow(1, c, 1).unwrap();
            for (a, b) in yc.to_vec().iter().zip(full.to_vec()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_rejects_bad_groups() {
        let x = Tensor::<f64>::ones(&[1, 3, 4, 4]).unwrap();
        let w = Tensor::<f64>::ones(&[2, 1, 3, 3]).unwrap();
        assert!(x.conv2d(&w, None, 1, 1, 2).is_err());
    }

    #[test]
    fn resize_constant_stays_constant() {
        let x = Tensor::<f64>::full(&[1, 1, 4, 4], 0.7).unwrap();
        for scale in [0.5, 2.0] {
            for y in [x.resize_nearest(scale).unwrap(), x.resize_bilinear(scale).unwrap()] {
                for v in y.to_vec() {
                    assert!((v - 0.7).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn resize_nearest_replicates_blocks() {
        let x = t(&[0.0, 1.0, 2.0, 3.0], &[1, 1, 2, 2]);
        let y = x.resize_nearest(2.0).unwrap();
        assert_eq!(y.dims(), &[1, 1, 4, 4]);
        let expect = [
            0.0, 0.0, 1.0, 1.0, //
            0.0, 0.0, 1.0, 1.0, //
            2.0, 2.0, 3.0, 3.0, //
            2.0, 2.0, 3.0, 3.0,
        ];
        assert_eq!(y.to_vec(), expect);
    }

    #[test]
    fn down_then_up_of_constant_is_constant() {
        let x = Tensor::<f64>::full(&[1, 1, 8, 8], 0.25).unwrap();
        let y = x.resize_bilinear(0.5).unwrap().resize_bilinear(2.0).unwrap();
        assert_eq!(y.dims(), &[1, 1, 8, 8]);
        for v in y.to_vec() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_rejects_vanishing_output() {
        let x = Tensor::<f64>::ones(&[1, 1, 2, 2]).unwrap();
        assert!(x.resize_nearest(0.1).is_err());
    }

    #[test]
    fn pad_reflect_mirrors_without_edge_duplication() {
        let x = t(&[1.0, 2.0, 3.0], &[1, 1, 1, 3]);
        let y = x.pad2d([0, 0, 2, 2], PadMode::Reflect).unwrap();
        assert_eq!(y.to_vec(), vec![3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn pad_zero_then_crop_is_identity() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        let y = x.pad2d([1, 1, 1, 1], PadMode::Zero).unwrap();
        assert_eq!(y.dims(), &[1, 1, 4, 4]);
        let z = y.narrow(2, 1, 2).unwrap().narrow(3, 1, 2).unwrap();
        assert_eq!(z.to_vec(), x.to_vec());
    }
}
