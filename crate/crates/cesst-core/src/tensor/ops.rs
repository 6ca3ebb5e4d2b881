//! Elementwise, reduction, and shape-manipulation ops.

use std::sync::Arc;

use super::{Element, Tensor, TensorShape};
use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes, right-aligned.
pub(crate) fn broadcast_dims(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: format!("{:?}", a),
                rhs: format!("{:?}", b),
            });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Strides of `dims` inside the broadcast coordinate system `out_dims`
/// (zero on broadcast axes).
pub(crate) fn broadcast_strides(out_dims: &[usize], dims: &[usize]) -> Vec<usize> {
    let rank = out_dims.len();
    let offset = rank - dims.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..dims.len()).rev() {
        strides[offset + i] = if dims[i] == 1 { 0 } else { acc };
        acc *= dims[i];
    }
    strides
}

/// Visit every element of the broadcast space, yielding the two source offsets.
pub(crate) fn for_each_pair(
    out_dims: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_dims.len();
    let total: usize = out_dims.iter().product();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for flat in 0..total {
        f(flat, oa, ob);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out_dims[ax] {
                break;
            }
            idx[ax] = 0;
            oa -= sa[ax] * out_dims[ax];
            ob -= sb[ax] * out_dims[ax];
        }
    }
}

/// Sum `src` (laid out as `src_dims`) down to `target_dims` (broadcast inverse).
pub(crate) fn reduce_to_shape<E: Element>(
    src: &[E],
    src_dims: &[usize],
    target_dims: &[usize],
) -> Vec<E> {
    if src_dims == target_dims {
        return src.to_vec();
    }
    let target_numel: usize = target_dims.iter().product();
    let mut out = vec![E::zero(); target_numel];
    let st = broadcast_strides(src_dims, target_dims);
    let zero = vec![0usize; src_dims.len()];
    for_each_pair(src_dims, &st, &zero, |flat, ot, _| {
        out[ot] += src[flat];
    });
    out
}

/// How one operand's flat index follows the broadcast output index.
#[derive(Clone)]
enum IndexPlan {
    /// Same shape as the output.
    Full,
    /// Operand repeats as a trailing block (bias over `[.., C]`).
    Suffix(usize),
    /// Operand is dense on leading axes, broadcast over trailing ones
    /// (per-lane scales like `[.., 1]`).
    Prefix(usize),
    Generic {
        strides: Vec<usize>,
        out_dims: Vec<usize>,
    },
}

impl IndexPlan {
    fn build(out_dims: &[usize], dims: &[usize]) -> IndexPlan {
        if out_dims == dims {
            return IndexPlan::Full;
        }
        let rank = out_dims.len();
        let offset = rank - dims.len();
        let mut padded = vec![1usize; rank];
        padded[offset..].copy_from_slice(dims);

        // suffix: all non-1 axes form a contiguous tail matching the output
        let tail_start = (0..rank).find(|&i| padded[i] != 1).unwrap_or(rank);
        if padded[tail_start..] == out_dims[tail_start..] {
            return IndexPlan::Suffix(padded[tail_start..].iter().product());
        }
        // prefix: leading axes match the output, the rest are 1
        let head_end = (0..rank).rev().find(|&i| padded[i] != 1).map_or(0, |i| i + 1);
        if padded[..head_end] == out_dims[..head_end] {
            return IndexPlan::Prefix(out_dims[head_end..].iter().product());
        }
        IndexPlan::Generic {
            strides: broadcast_strides(out_dims, dims),
            out_dims: out_dims.to_vec(),
        }
    }

    #[inline]
    fn at(&self, flat: usize) -> usize {
        match self {
            IndexPlan::Full => flat,
            IndexPlan::Suffix(period) => flat % period,
            IndexPlan::Prefix(inner) => flat / inner,
            IndexPlan::Generic { strides, out_dims } => {
                let mut rem = flat;
                let mut off = 0;
                for i in (0..out_dims.len()).rev() {
                    off += (rem % out_dims[i]) * strides[i];
                    rem /= out_dims[i];
                }
                off
            }
        }
    }
}

fn binary_op<E: Element>(
    op: &'static str,
    a: &Tensor<E>,
    b: &Tensor<E>,
    f: impl Fn(E, E) -> E,
    dfa: impl Fn(E, E) -> E + Send + Sync + 'static,
    dfb: impl Fn(E, E) -> E + Send + Sync + 'static,
) -> Result<Tensor<E>> {
    let out_dims = broadcast_dims(a.dims(), b.dims(), op)?;
    let shape = TensorShape::new(&out_dims)?;
    let mut data = vec![E::zero(); shape.numel()];

    let (ad, bd) = (a.data(), b.data());
    let plan_a = IndexPlan::build(&out_dims, a.dims());
    let plan_b = IndexPlan::build(&out_dims, b.dims());
    match (&plan_a, &plan_b) {
        (IndexPlan::Full, IndexPlan::Full) => {
            for ((o, &x), &y) in data.iter_mut().zip(ad).zip(bd) {
                *o = f(x, y);
            }
        }
        _ => {
            for (flat, o) in data.iter_mut().enumerate() {
                *o = f(ad[plan_a.at(flat)], bd[plan_b.at(flat)]);
            }
        }
    }

    let (aa, ba) = (a.data_arc(), b.data_arc());
    let (adims, bdims, odims) = (a.dims().to_vec(), b.dims().to_vec(), out_dims);
    let backward = Box::new(move |grad: &[E]| {
        if adims == bdims {
            // no broadcast: single contiguous pass
            let mut ga = vec![E::zero(); grad.len()];
            let mut gb = vec![E::zero(); grad.len()];
            for i in 0..grad.len() {
                let (x, y) = (aa[i], ba[i]);
                ga[i] = grad[i] * dfa(x, y);
                gb[i] = grad[i] * dfb(x, y);
            }
            return vec![Some(ga), Some(gb)];
        }
        let plan_a = IndexPlan::build(&odims, &adims);
        let plan_b = IndexPlan::build(&odims, &bdims);
        let a_numel: usize = adims.iter().product();
        let b_numel: usize = bdims.iter().product();
        let mut ga = vec![E::zero(); a_numel];
        let mut gb = vec![E::zero(); b_numel];
        for (flat, &g) in grad.iter().enumerate() {
            let (ia, ib) = (plan_a.at(flat), plan_b.at(flat));
            let (x, y) = (aa[ia], ba[ib]);
            ga[ia] += g * dfa(x, y);
            gb[ib] += g * dfb(x, y);
        }
        vec![Some(ga), Some(gb)]
    });
    Tensor::from_op(data, shape, vec![a.clone(), b.clone()], backward, op)
}

fn unary_op<E: Element>(
    op: &'static str,
    x: &Tensor<E>,
    f: impl Fn(E) -> E,
    // derivative as a function of (input, output)
    df: impl Fn(E, E) -> E + Send + Sync + 'static,
) -> Result<Tensor<E>> {
    let data: Vec<E> = x.data().iter().map(|&v| f(v)).collect();
    let xd = x.data_arc();
    let yd = Arc::new(data.clone());
    let backward = Box::new(move |grad: &[E]| {
        let g = grad
            .iter()
            .zip(xd.iter().zip(yd.iter()))
            .map(|(&g, (&xi, &yi))| g * df(xi, yi))
            .collect();
        vec![Some(g)]
    });
    Tensor::from_op(data, x.shape().clone(), vec![x.clone()], backward, op)
}

impl<E: Element> Tensor<E> {
    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        binary_op("add", self, other, |a, b| a + b, |_, _| E::one(), |_, _| E::one())
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        binary_op("sub", self, other, |a, b| a - b, |_, _| E::one(), |_, _| -E::one())
    }

    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        binary_op("mul", self, other, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        binary_op(
            "div",
            self,
            other,
            |a, b| a / b,
            |_, b| E::one() / b,
            |a, b| -a / (b * b),
        )
    }

    pub fn neg(&self) -> Result<Tensor<E>> {
        unary_op("neg", self, |v| -v, |_, _| -E::one())
    }

    pub fn abs(&self) -> Result<Tensor<E>> {
        unary_op(
            "abs",
            self,
            |v| v.abs(),
            |x, _| {
                if x > E::zero() {
                    E::one()
                } else if x < E::zero() {
                    -E::one()
                } else {
                    E::zero()
                }
            },
        )
    }

    pub fn sqrt(&self) -> Result<Tensor<E>> {
        unary_op(
            "sqrt",
            self,
            |v| v.sqrt(),
            |_, y| E::from_f64(0.5) / y,
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor<E>> {
        unary_op(
            "sigmoid",
            self,
            |v| {
                // split for stability at large |v|
                if v >= E::zero() {
                    E::one() / (E::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (E::one() + e)
                }
            },
            |_, y| y * (E::one() - y),
        )
    }

    pub fn relu(&self) -> Result<Tensor<E>> {
        unary_op(
            "relu",
            self,
            |v| if v > E::zero() { v } else { E::zero() },
            |x, _| if x > E::zero() { E::one() } else { E::zero() },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Tensor<E>> {
        let c = E::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let a = E::from_f64(0.044715);
        let half = E::from_f64(0.5);
        let three = E::from_f64(3.0);
        unary_op(
            "gelu",
            self,
            move |x| {
                let u = c * (x + a * x * x * x);
                half * x * (E::one() + u.tanh())
            },
            move |x, _| {
                let u = c * (x + a * x * x * x);
                let t = u.tanh();
                let sech2 = E::one() - t * t;
                half * (E::one() + t) + half * x * sech2 * c * (E::one() + three * a * x * x)
            },
        )
    }

    pub fn clamp(&self, lo: E, hi: E) -> Result<Tensor<E>> {
        unary_op(
            "clamp",
            self,
            move |v| v.max(lo).min(hi),
            move |x, _| {
                if x >= lo && x <= hi {
                    E::one()
                } else {
                    E::zero()
                }
            },
        )
    }

    pub fn add_scalar(&self, c: E) -> Result<Tensor<E>> {
        unary_op("add_scalar", self, move |v| v + c, |_, _| E::one())
    }

    pub fn mul_scalar(&self, c: E) -> Result<Tensor<E>> {
        unary_op("mul_scalar", self, move |v| v * c, move |_, _| c)
    }

    pub fn sum_all(&self) -> Result<Tensor<E>> {
        let total: E = self.data().iter().copied().sum();
        let n = self.numel();
        let backward = Box::new(move |grad: &[E]| vec![Some(vec![grad[0]; n])]);
        Tensor::from_op(
            vec![total],
            TensorShape::scalar(),
            vec![self.clone()],
            backward,
            "sum_all",
        )
    }

    pub fn mean_all(&self) -> Result<Tensor<E>> {
        let n = self.numel();
        let inv = E::one() / E::from_f64(n as f64);
        self.sum_all()?.mul_scalar(inv)
    }

    fn axis_geometry(&self, axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
        let dims = self.dims();
        if axis >= dims.len() {
            return Err(Error::InvalidArg {
                op,
                msg: format!("axis {axis} out of range for shape {}", self.shape()),
            });
        }
        let outer: usize = dims[..axis].iter().product();
        let len = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        Ok((outer, len, inner))
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<E>> {
        let (outer, len, inner) = self.axis_geometry(axis, "sum_axis")?;
        let mut out = vec![E::zero(); outer * inner];
        let x = self.data();
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                let dst = o * inner;
                for i in 0..inner {
                    out[dst + i] += x[base + i];
                }
            }
        }
        let mut out_dims: Vec<usize> = self.dims().to_vec();
        if keepdim {
            out_dims[axis] = 1;
        } else {
            out_dims.remove(axis);
        }
        let shape = if out_dims.is_empty() {
            TensorShape::scalar()
        } else {
            TensorShape::new(&out_dims)?
        };
        let n_in = self.numel();
        let backward = Box::new(move |grad: &[E]| {
            let mut g = vec![E::zero(); n_in];
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    let src = o * inner;
                    for i in 0..inner {
                        g[base + i] = grad[src + i];
                    }
                }
            }
            vec![Some(g)]
        });
        Tensor::from_op(out, shape, vec![self.clone()], backward, "sum_axis")
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<E>> {
        let len = *self.dims().get(axis).ok_or(Error::InvalidArg {
            op: "mean_axis",
            msg: format!("axis {axis} out of range for shape {}", self.shape()),
        })?;
        self.sum_axis(axis, keepdim)?
            .mul_scalar(E::one() / E::from_f64(len as f64))
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor<E>> {
        let shape = TensorShape::new(dims)?;
        if shape.numel() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_string(),
                rhs: shape.to_string(),
            });
        }
        // Row-major data is unchanged; only the shape moves.
        let backward = Box::new(move |grad: &[E]| vec![Some(grad.to_vec())]);
        Ok(Tensor::from_op_shared(
            self.data_arc(),
            shape,
            vec![self.clone()],
            backward,
            "reshape",
        ))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<E>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidArg {
                op: "permute",
                msg: format!("axes {:?} are not a permutation of 0..{rank}", axes),
            });
        }
        let in_dims = self.dims().to_vec();
        let out_dims: Vec<usize> = axes.iter().map(|&a| in_dims[a]).collect();
        let out = permute_data(self.data(), &in_dims, axes);
        let axes_owned = axes.to_vec();
        let backward = Box::new(move |grad: &[E]| {
            let mut inverse = vec![0usize; axes_owned.len()];
            for (i, &a) in axes_owned.iter().enumerate() {
                inverse[a] = i;
            }
            let grad_dims: Vec<usize> = axes_owned.iter().map(|&a| in_dims[a]).collect();
            vec![Some(permute_data(grad, &grad_dims, &inverse))]
        });
        Tensor::from_op(
            out,
            TensorShape::new(&out_dims)?,
            vec![self.clone()],
            backward,
            "permute",
        )
    }

    /// Gather along one axis: `out[.., j, ..] = x[.., indices[j], ..]`.
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor<E>> {
        let (outer, len, inner) = self.axis_geometry(axis, "index_select")?;
        if indices.is_empty() {
            return Err(Error::InvalidArg {
                op: "index_select",
                msg: "empty index list".into(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::InvalidArg {
                op: "index_select",
                msg: format!("index {bad} out of range for axis extent {len}"),
            });
        }
        let x = self.data();
        let m = indices.len();
        let mut out = vec![E::zero(); outer * m * inner];
        for o in 0..outer {
            for (j, &src) in indices.iter().enumerate() {
                let s = (o * len + src) * inner;
                let d = (o * m + j) * inner;
                out[d..d + inner].copy_from_slice(&x[s..s + inner]);
            }
        }
        let mut out_dims = self.dims().to_vec();
        out_dims[axis] = m;
        let idx = indices.to_vec();
        let n_in = self.numel();
        let backward = Box::new(move |grad: &[E]| {
            let mut g = vec![E::zero(); n_in];
            for o in 0..outer {
                for (j, &src) in idx.iter().enumerate() {
                    let s = (o * len + src) * inner;
                    let d = (o * m + j) * inner;
                    for i in 0..inner {
                        g[s + i] += grad[d + i];
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
            "index_select",
        )
    }

    /// Contiguous sub-range along one axis.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
        let extent = *self.dims().get(axis).ok_or(Error::InvalidArg {
            op: "narrow",
            msg: format!("axis {axis} out of range for shape {}", self.shape()),
        })?;
        if start + len > extent || len == 0 {
            return Err(Error::InvalidArg {
                op: "narrow",
                msg: format!("range {start}..{} out of bounds (extent {extent})", start + len),
            });
        }
        let indices: Vec<usize> = (start..start + len).collect();
        self.index_select(axis, &indices)
    }

    /// Concatenate along an axis; all other extents must match.
    pub fn concat(parts: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        if parts.is_empty() {
            return Err(Error::InvalidArg {
                op: "concat",
                msg: "no tensors given".into(),
            });
        }
        let first = parts[0];
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::InvalidArg {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {}", first.shape()),
            });
        }
        for p in parts {
            if p.rank() != rank
                || p.dims()
                    .iter()
                    .zip(first.dims())
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_string(),
                    rhs: p.shape().to_string(),
                });
            }
        }
        let outer: usize = first.dims()[..axis].iter().product();
        let inner: usize = first.dims()[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.dims()[axis]).collect();
        let total_len: usize = lens.iter().sum();
        let mut out = vec![E::zero(); outer * total_len * inner];
        for o in 0..outer {
            let mut off = 0usize;
            for (p, &l) in parts.iter().zip(&lens) {
                let src = o * l * inner;
                let dst = (o * total_len + off) * inner;
                out[dst..dst + l * inner].copy_from_slice(&p.data()[src..src + l * inner]);
                off += l;
            }
        }
        let mut out_dims = first.dims().to_vec();
        out_dims[axis] = total_len;
        let lens_b = lens.clone();
        let backward = Box::new(move |grad: &[E]| {
            let mut grads: Vec<Option<Vec<E>>> = lens_b
                .iter()
                .map(|&l| Some(vec![E::zero(); outer * l * inner]))
                .collect();
            for o in 0..outer {
                let mut off = 0usize;
                for (gi, &l) in lens_b.iter().enumerate() {
                    let src = (o * total_len + off) * inner;
                    let dst = o * l * inner;
                    let g = grads[gi].as_mut().unwrap();
                    g[dst..dst + l * inner].copy_from_slice(&grad[src..src + l * inner]);
                    off += l;
                }
            }
            grads
        });
        let parents: Vec<Tensor<E>> = parts.iter().map(|p| (*p).clone()).collect();
        Tensor::from_op(out, TensorShape::new(&out_dims)?, parents, backward, "concat")
    }
}

pub(crate) fn permute_data<E: Element>(data: &[E], in_dims: &[usize], axes: &[usize]) -> Vec<E> {
    let rank = in_dims.len();
    let out_dims: Vec<usize> = axes.iter().map(|&a| in_dims[a]).collect();
    let in_strides = TensorShape::new(in_dims).expect("valid dims").strides();
    // stride of output axis k in the input buffer
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total: usize = out_dims.iter().product();
    let mut out = vec![E::zero(); total];
    if rank == 0 {
        out[0] = data[0];
        return out;
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for o in out.iter_mut() {
        *o = data[src];
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_dims[ax] {
                break;
            }
            idx[ax] = 0;
            src -= src_strides[ax] * out_dims[ax];
        }
    }
    out
}
