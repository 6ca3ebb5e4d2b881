//! Central finite-difference gradient oracle.
//!
//! This is the independent reference that backward() is checked against; it
//! must stay free of any autodiff machinery.

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Per-element central differences `(f(x+h) - f(x-h)) / 2h` of a scalar
/// function. `f` must be deterministic and pure.
pub fn finite_diff_grad<E: Element>(
    f: &dyn Fn(&Tensor<E>) -> Result<Tensor<E>>,
    x: &Tensor<E>,
    step: f64,
) -> Result<Tensor<E>> {
    let h = E::from_f64(step);
    let base = x.to_vec();
    let mut grad = vec![E::zero(); base.len()];
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = eval_scalar(f, plus, x)?;
        let fm = eval_scalar(f, minus, x)?;
        grad[i] = (fp - fm) / (h + h);
    }
    Tensor::from_vec(grad, x.dims())
}

fn eval_scalar<E: Element>(
    f: &dyn Fn(&Tensor<E>) -> Result<Tensor<E>>,
    data: Vec<E>,
    proto: &Tensor<E>,
) -> Result<E> {
    let probe = Tensor::from_vec(data, proto.dims())?;
    let out = f(&probe)?;
    if out.numel() != 1 {
        return Err(Error::InvalidArg {
            op: "finite_diff_grad",
            msg: format!("f must return a scalar, got shape {}", out.shape()),
        });
    }
    out.item()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        // f = sum x^2 at x=[1]: d/dx = 2.0
        let x = Tensor::from_vec(vec![1.0f64], &[1]).unwrap();
        let g = finite_diff_grad(&|t| t.mul(t)?.sum_all(), &x, 1e-4).unwrap();
        assert!((g.to_vec()[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn linear_sum_gradient_is_ones() {
        let x = Tensor::from_vec(vec![0.3f64, -2.0, 7.5, 0.0], &[4]).unwrap();
        let g = finite_diff_grad(&|t| t.sum_all(), &x, 1e-4).unwrap();
        for v in g.to_vec() {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }
}
