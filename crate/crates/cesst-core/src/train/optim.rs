//! Adam with bias correction and the cosine-annealing schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Element, GradStore, Tensor};

/// Cosine annealing from `lr0` down to `lr_min` over `total_steps`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Schedule {
    pub total_steps: u64,
    pub lr0: f64,
    pub lr_min: f64,
}

impl Schedule {
    pub fn new(total_steps: u64, lr0: f64, lr_min: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Config("schedule needs total_steps >= 1".into()));
        }
        Ok(Schedule {
            total_steps,
            lr0,
            lr_min,
        })
    }
}

/// `lr_min + (lr0 - lr_min) * (1 + cos(pi * step / T)) / 2`; steps beyond
/// `T` clamp to `lr_min`.
pub fn cosine_lr(step: u64, sched: &Schedule) -> f64 {
    if step >= sched.total_steps {
        return sched.lr_min;
    }
    let ratio = step as f64 / sched.total_steps as f64;
    sched.lr_min + (sched.lr0 - sched.lr_min) * (1.0 + (std::f64::consts::PI * ratio).cos()) / 2.0
}

/// Adam state: per-parameter first/second moments addressed by name.
pub struct OptimState<E: Element> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Vec<E>>,
    v: BTreeMap<String, Vec<E>>,
}

impl<E: Element> OptimState<E> {
    pub fn new() -> Self {
        OptimState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One bias-corrected update: `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
    /// Parameters without a gradient in `grads` are left untouched.
    pub fn adam_step<M: ParamSet<E>>(
        &mut self,
        module: &mut M,
        grads: &GradStore<E>,
        lr: f64,
    ) -> Result<()> {
        self.adam_step_scaled(module, grads, lr, 1.0)
    }

    /// Adam update with a gradient scale factor (global-norm clipping).
    pub fn adam_step_scaled<M: ParamSet<E>>(
        &mut self,
        module: &mut M,
        grads: &GradStore<E>,
        lr: f64,
        grad_scale: f64,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let b1 = E::from_f64(self.beta1);
        let b2 = E::from_f64(self.beta2);
        let one_m_b1 = E::from_f64(1.0 - self.beta1);
        let one_m_b2 = E::from_f64(1.0 - self.beta2);
        let inv_bc1 = E::from_f64(1.0 / bc1);
        let inv_bc2 = E::from_f64(1.0 / bc2);
        let lr_e = E::from_f64(lr);
        let eps = E::from_f64(self.eps);
        let gscale = E::from_f64(grad_scale);

        let mut failure: Option<Error> = None;
        let (m_map, v_map) = (&mut self.m, &mut self.v);
        module.visit_mut("", &mut |name, theta| {
            if failure.is_some() {
                return;
            }
            let Some(g) = grads.get(theta) else { return };
            let n = theta.numel();
            let m = m_map.entry(name.to_string()).or_insert_with(|| vec![E::zero(); n]);
            let v = v_map.entry(name.to_string()).or_insert_with(|| vec![E::zero(); n]);
            if m.len() != n || g.len() != n {
                failure = Some(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: format!("{name}: {n} params"),
                    rhs: format!("{} moments / {} grads", m.len(), g.len()),
                });
                return;
            }
            let mut updated = theta.to_vec();
            for i in 0..n {
                let gi = gscale * g[i];
                m[i] = b1 * m[i] + one_m_b1 * gi;
                v[i] = b2 * v[i] + one_m_b2 * gi * gi;
                let m_hat = m[i] * inv_bc1;
                let v_hat = v[i] * inv_bc2;
                updated[i] = updated[i] - lr_e * m_hat / (v_hat.sqrt() + eps);
            }
            match Tensor::from_vec(updated, theta.dims()) {
                Ok(t) => *theta = t.with_requires_grad(),
                Err(e) => failure = Some(e),
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Moments plus the step counter as named tensors, for resumable runs.
    pub fn to_named_tensors(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = vec![(
            "adam.step".to_string(),
            Tensor::from_vec(vec![E::from_f64(self.step as f64)], &[1]).expect("scalar"),
        )];
        for (name, m) in &self.m {
            let t = Tensor::from_vec(m.clone(), &[m.len()]).expect("moment tensor");
            out.push((format!("adam.m.{name}"), t));
        }
        for (name, v) in &self.v {
            let t = Tensor::from_vec(v.clone(), &[v.len()]).expect("moment tensor");
            out.push((format!("adam.v.{name}"), t));
        }
        out
    }

    pub fn from_named_tensors(map: &BTreeMap<String, Tensor<E>>) -> Result<Self> {
        let mut state = OptimState::new();
        let step = map
            .get("adam.step")
            .ok_or_else(|| Error::Data("optimizer state is missing adam.step".into()))?;
        state.step = step.data()[0].as_f64() as u64;
        for (name, t) in map {
            if let Some(p) = name.strip_prefix("adam.m.") {
                state.m.insert(p.to_string(), t.to_vec());
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                state.v.insert(p.to_string(), t.to_vec());
            }
        }
        Ok(state)
    }
}

impl<E: Element> Default for OptimState<E> {
    fn default() -> Self {
        Self::new()
    }
}
