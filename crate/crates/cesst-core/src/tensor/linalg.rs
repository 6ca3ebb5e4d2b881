//! Batched matrix multiply with broadcastable batch prefixes.

use super::ops::{broadcast_dims, broadcast_strides, for_each_pair};
use super::{Element, Tensor, TensorShape};
use crate::error::{Error, Result};

/// `c[m,n] += a[m,k] @ b[k,n]`, row-major. ikj order keeps the inner loop
/// contiguous so it vectorizes.
fn matmul_acc<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == E::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `da[m,k] += dc[m,n] @ b[k,n]^T`
fn matmul_grad_a<E: Element>(dc: &[E], b: &[E], da: &mut [E], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for kk in 0..k {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut acc = E::zero();
            for (&g, &bv) in dc_row.iter().zip(b_row) {
                acc += g * bv;
            }
            da[i * k + kk] += acc;
        }
    }
}

/// `db[k,n] += a[m,k]^T @ dc[m,n]`
fn matmul_grad_b<E: Element>(a: &[E], dc: &[E], db: &mut [E], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == E::zero() {
                continue;
            }
            let db_row = &mut db[kk * n..(kk + 1) * n];
            for (d, &g) in db_row.iter_mut().zip(dc_row) {
                *d += av * g;
            }
        }
    }
}

impl<E: Element> Tensor<E> {
    /// Matrix product over the trailing two axes; leading axes broadcast.
    pub fn matmul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        let (ad, bd) = (self.dims(), other.dims());
        if ad.len() < 2 || bd.len() < 2 {
            return Err(Error::InvalidArg {
                op: "matmul",
                msg: format!("need rank >= 2 operands, got {} x {}", self.shape(), other.shape()),
            });
        }
        let (m, ka) = (ad[ad.len() - 2], ad[ad.len() - 1]);
        let (kb, n) = (bd[bd.len() - 2], bd[bd.len() - 1]);
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_string(),
                rhs: other.shape().to_string(),
            });
        }
        let batch_a = &ad[..ad.len() - 2];
        let batch_b = &bd[..bd.len() - 2];
        let batch = broadcast_dims(batch_a, batch_b, "matmul")?;
        let sa = broadcast_strides(&batch, batch_a);
        let sb = broadcast_strides(&batch, batch_b);
        let batch_numel: usize = batch.iter().product();

        let (av, bv) = (self.data(), other.data());
        let mut out = vec![E::zero(); batch_numel * m * n];
        {
            let mut cell = 0usize;
            for_each_pair(&batch, &sa, &sb, |_, oa, ob| {
                matmul_acc(
                    &av[oa * m * ka..(oa + 1) * m * ka],
                    &bv[ob * ka * n..(ob + 1) * ka * n],
                    &mut out[cell * m * n..(cell + 1) * m * n],
                    m,
                    ka,
                    n,
                );
                cell += 1;
            });
        }
        let mut out_dims = batch.clone();
        out_dims.extend_from_slice(&[m, n]);

        let (aa, ba) = (self.data_arc(), other.data_arc());
        let (na, nb) = (self.numel(), other.numel());
        let k = ka;
        let backward = Box::new(move |grad: &[E]| {
            let mut da = vec![E::zero(); na];
            let mut db = vec![E::zero(); nb];
            let mut cell = 0usize;
            for_each_pair(&batch, &sa, &sb, |_, oa, ob| {
                let g = &grad[cell * m * n..(cell + 1) * m * n];
                matmul_grad_a(g, &ba[ob * k * n..(ob + 1) * k * n], &mut da[oa * m * k..(oa + 1) * m * k], m, k, n);
                matmul_grad_b(&aa[oa * m * k..(oa + 1) * m * k], g, &mut db[ob * k * n..(ob + 1) * k * n], m, k, n);
                cell += 1;
            });
            vec![Some(da), Some(db)]
        });
        Tensor::from_op(
            out,
            TensorShape::new(&out_dims)?,
            vec![self.clone(), other.clone()],
            backward,
            "matmul",
        )
    }
}
