//! Named-parameter plumbing: traversal, initialization, and the checkpoint
//! container.
//!
//! Checkpoint layout: u32 LE header length, JSON header mapping each tensor
//! name to `{shape, dtype, offset}`, then the concatenated raw tensors in
//! little-endian order.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// A module that owns named parameter tensors, addressable by stable
/// hierarchical paths (e.g. `scale0.febR.enc1.ssab0.spatial.wq.weight`).
pub trait ParamSet<E: Element> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Total number of scalar parameters.
pub fn param_count<E: Element>(m: &dyn ParamSet<E>) -> u64 {
    let mut n = 0u64;
    m.visit("", &mut |_, t| n += t.numel() as u64);
    n
}

/// Collect `(name, tensor)` pairs in traversal order.
pub fn named_params<E: Element>(m: &dyn ParamSet<E>) -> Vec<(String, Tensor<E>)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
    out
}

/// Replace every parameter with zeros (identity probe for residual blocks).
pub fn zero_all<E: Element>(m: &mut dyn ParamSet<E>) {
    m.visit_mut("", &mut |_, t| {
        *t = Tensor::leaf(vec![E::zero(); t.numel()], t.shape().clone(), true);
    });
}

/// Cut gradient tracking on every parameter (benchmark mode).
pub fn detach_all<E: Element>(m: &mut dyn ParamSet<E>) {
    m.visit_mut("", &mut |_, t| *t = t.detach());
}

/// Uniform init in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, gradient-tracking.
pub fn uniform_init<E: Element>(rng: &mut ChaCha8Rng, dims: &[usize], fan_in: usize) -> Tensor<E> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = dims.iter().product();
    let data: Vec<E> = (0..n)
        .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(data, dims)
        .expect("valid init dims")
        .with_requires_grad()
}

pub fn zeros_param<E: Element>(dims: &[usize]) -> Tensor<E> {
    Tensor::zeros(dims).expect("valid dims").with_requires_grad()
}

pub fn ones_param<E: Element>(dims: &[usize]) -> Tensor<E> {
    Tensor::ones(dims).expect("valid dims").with_requires_grad()
}

pub fn full_param<E: Element>(dims: &[usize], v: f64) -> Tensor<E> {
    Tensor::full(dims, E::from_f64(v))
        .expect("valid dims")
        .with_requires_grad()
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

/// Write every named tensor of `m` into a checkpoint stream.
pub fn write_checkpoint<E: Element, W: Write>(w: &mut W, m: &dyn ParamSet<E>) -> Result<()> {
    let named = named_params(m);
    write_named_tensors(w, &named)
}

pub fn write_named_tensors<E: Element, W: Write>(
    w: &mut W,
    named: &[(String, Tensor<E>)],
) -> Result<()> {
    let mut header: BTreeMap<String, TensorEntry> = BTreeMap::new();
    let mut offset = 0u64;
    for (name, t) in named {
        if header.contains_key(name) {
            return Err(Error::InvalidArg {
                op: "checkpoint",
                msg: format!("duplicate tensor name {name}"),
            });
        }
        header.insert(
            name.clone(),
            TensorEntry {
                shape: t.dims().to_vec(),
                dtype: E::DTYPE.name().to_string(),
                offset,
            },
        );
        offset += (t.numel() * E::DTYPE.size_bytes()) as u64;
    }
    let header_bytes = serde_json::to_vec(&header)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, t) in named {
        crate::tensor::serial_write_elements(w, t.data())?;
    }
    Ok(())
}

/// Read a checkpoint stream into a name -> tensor map.
pub fn read_named_tensors<E: Element, R: Read>(r: &mut R) -> Result<BTreeMap<String, Tensor<E>>> {
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::Data("checkpoint header truncated".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::Data("checkpoint header truncated".into()))?;
    let header: BTreeMap<String, TensorEntry> = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;

    let mut out = BTreeMap::new();
    for (name, entry) in header {
        if entry.dtype != E::DTYPE.name() {
            return Err(Error::Data(format!(
                "tensor {name}: dtype {} does not match requested {}",
                entry.dtype,
                E::DTYPE.name()
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let bytes = numel * E::DTYPE.size_bytes();
        let start = entry.offset as usize;
        let end = start + bytes;
        if end > payload.len() {
            return Err(Error::Data(format!("tensor {name}: payload truncated")));
        }
        let data = crate::tensor::serial_read_elements::<E>(&payload[start..end])?;
        out.insert(name, Tensor::from_vec(data, &entry.shape)?);
    }
    Ok(out)
}

/// Load checkpoint values into an existing module (shapes must match).
pub fn load_into<E: Element>(m: &mut dyn ParamSet<E>, ckpt: &BTreeMap<String, Tensor<E>>) -> Result<()> {
    let mut missing = Vec::new();
    let mut err: Option<Error> = None;
    m.visit_mut("", &mut |name, t| {
        match ckpt.get(name) {
            Some(v) if v.dims() == t.dims() => {
                *t = v.clone().with_requires_grad();
            }
            Some(v) => {
                if err.is_none() {
                    err = Some(Error::Data(format!(
                        "tensor {name}: checkpoint shape {} does not match model {}",
                        v.shape(),
                        t.shape()
                    )));
                }
            }
            None => missing.push(name.to_string()),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "checkpoint is missing {} tensors (first: {})",
            missing.len(),
            missing[0]
        )));
    }
    Ok(())
}
