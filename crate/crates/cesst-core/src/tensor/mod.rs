//! Minimal dense tensor engine with reverse-mode differentiation.
//!
//! Tensors are immutable once written: every op produces a fresh tensor that
//! records its parents and a backward closure when gradients are needed.
//! Layout is row-major, channels-first for images ([C, H, W] / [B, C, H, W]).

mod autodiff;
mod fd;
mod linalg;
mod nn;
mod ops;
mod serial;

pub use autodiff::{GradStore, GradTape};
pub use fd::finite_diff_grad;
pub use nn::PadMode;
pub use serial::{read_tensor, write_tensor, TNSR_MAGIC};

pub(crate) use serial::read_elements_from_bytes as serial_read_elements;
pub(crate) use serial::write_elements as serial_write_elements;

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar element of a tensor. Implemented for `f32` and `f64`.
pub trait Element:
    num_traits::Float
    + num_traits::NumAssignOps
    + std::iter::Sum
    + Copy
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Element precision tag, also used by the on-disk formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32le",
            Dtype::F64 => "f64le",
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Shape of a dense tensor: a list of positive extents, row-major.
///
/// Rank 0 denotes a scalar (one element).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TensorShape(Vec<usize>);

impl TensorShape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArg {
                op: "shape",
                msg: format!("every extent must be >= 1, got {:?}", dims),
            });
        }
        Ok(TensorShape(dims.to_vec()))
    }

    pub fn scalar() -> Self {
        TensorShape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides, innermost axis last.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

impl fmt::Debug for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

/// Unique identifier for a tensor node, used to address gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

impl TensorId {
    fn fresh() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        TensorId(NEXT.fetch_add(1, Ordering::Relaxed))
    }
}

static FINITE_CHECKS: AtomicBool = AtomicBool::new(true);

/// Toggle NaN/Inf detection after each op. On by default; benchmark mode
/// turns it off to keep timing clean.
pub fn set_finite_checks(enabled: bool) {
    FINITE_CHECKS.store(enabled, Ordering::Relaxed);
}

pub fn finite_checks_enabled() -> bool {
    FINITE_CHECKS.load(Ordering::Relaxed)
}

static ALLOC_ELEMENTS: AtomicU64 = AtomicU64::new(0);

/// Running count of elements materialized by ops (activation-memory proxy).
pub fn alloc_counter_reset() {
    ALLOC_ELEMENTS.store(0, Ordering::Relaxed);
}

pub fn alloc_counter_read() -> u64 {
    ALLOC_ELEMENTS.load(Ordering::Relaxed)
}

pub(crate) type BackwardFn<E> = Box<dyn Fn(&[E]) -> Vec<Option<Vec<E>>> + Send + Sync>;

pub(crate) struct Node<E: Element> {
    id: TensorId,
    shape: TensorShape,
    data: Arc<Vec<E>>,
    requires_grad: bool,
    parents: Vec<Tensor<E>>,
    backward: Option<BackwardFn<E>>,
    op: &'static str,
    root_spent: AtomicBool,
}

/// Dense N-dimensional array of reals with optional gradient tracking.
///
/// Cloning is cheap (reference-counted handle). Data is immutable after the
/// producing op finishes.
pub struct Tensor<E: Element> {
    node: Arc<Node<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={:?}, shape={}, op={}, grad={})",
            self.node.id, self.node.shape, self.node.op, self.node.requires_grad
        )
    }
}

fn check_finite<E: Element>(op: &'static str, data: &[E]) -> Result<()> {
    if finite_checks_enabled() && data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op });
    }
    Ok(())
}

impl<E: Element> Tensor<E> {
    /// Leaf tensor from raw row-major data.
    pub fn from_vec(data: Vec<E>, dims: &[usize]) -> Result<Self> {
        let shape = TensorShape::new(dims)?;
        if data.len() != shape.numel() {
            return Err(Error::InvalidArg {
                op: "from_vec",
                msg: format!("data length {} != shape {} numel", data.len(), shape),
            });
        }
        check_finite("from_vec", &data)?;
        Ok(Self::leaf(data, shape, false))
    }

    pub fn scalar(v: E) -> Self {
        Self::leaf(vec![v], TensorShape::scalar(), false)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let shape = TensorShape::new(dims)?;
        let n = shape.numel();
        Ok(Self::leaf(vec![E::zero(); n], shape, false))
    }

    pub fn ones(dims: &[usize]) -> Result<Self> {
        let shape = TensorShape::new(dims)?;
        let n = shape.numel();
        Ok(Self::leaf(vec![E::one(); n], shape, false))
    }

    pub fn full(dims: &[usize], v: E) -> Result<Self> {
        let shape = TensorShape::new(dims)?;
        let n = shape.numel();
        Ok(Self::leaf(vec![v; n], shape, false))
    }

    pub(crate) fn leaf(data: Vec<E>, shape: TensorShape, requires_grad: bool) -> Self {
        Tensor {
            node: Arc::new(Node {
                id: TensorId::fresh(),
                shape,
                data: Arc::new(data),
                requires_grad,
                parents: Vec::new(),
                backward: None,
                op: "leaf",
                root_spent: AtomicBool::new(false),
            }),
        }
    }

    /// Mark this tensor as a differentiation leaf (parameter or probed input).
    pub fn with_requires_grad(self) -> Self {
        if self.node.requires_grad {
            return self;
        }
        Tensor {
            node: Arc::new(Node {
                id: self.node.id,
                shape: self.node.shape.clone(),
                data: Arc::clone(&self.node.data),
                requires_grad: true,
                parents: Vec::new(),
                backward: None,
                op: "leaf",
                root_spent: AtomicBool::new(false),
            }),
        }
    }

    /// A leaf view of the same data with gradient tracking cut.
    pub fn detach(&self) -> Self {
        Tensor {
            node: Arc::new(Node {
                id: TensorId::fresh(),
                shape: self.node.shape.clone(),
                data: Arc::clone(&self.node.data),
                requires_grad: false,
                parents: Vec::new(),
                backward: None,
                op: "leaf",
                root_spent: AtomicBool::new(false),
            }),
        }
    }

    /// Result of an op. Parents and the backward closure are dropped when no
    /// parent tracks gradients, so inference builds no graph.
    pub(crate) fn from_op(
        data: Vec<E>,
        shape: TensorShape,
        parents: Vec<Tensor<E>>,
        backward: BackwardFn<E>,
        op: &'static str,
    ) -> Result<Self> {
        debug_assert_eq!(data.len(), shape.numel(), "{op}: bad output buffer");
        check_finite(op, &data)?;
        ALLOC_ELEMENTS.fetch_add(data.len() as u64, Ordering::Relaxed);
        let track = parents.iter().any(|p| p.requires_grad());
        Ok(Tensor {
            node: Arc::new(Node {
                id: TensorId::fresh(),
                shape,
                data: Arc::new(data),
                requires_grad: track,
                parents: if track { parents } else { Vec::new() },
                backward: if track { Some(backward) } else { None },
                op,
                root_spent: AtomicBool::new(false),
            }),
        })
    }

    /// Like `from_op` but reusing an existing buffer (reshape-style ops that
    /// do not touch values).
    pub(crate) fn from_op_shared(
        data: std::sync::Arc<Vec<E>>,
        shape: TensorShape,
        parents: Vec<Tensor<E>>,
        backward: BackwardFn<E>,
        op: &'static str,
    ) -> Self {
        debug_assert_eq!(data.len(), shape.numel(), "{op}: bad output buffer");
        let track = parents.iter().any(|p| p.requires_grad());
        Tensor {
            node: Arc::new(Node {
                id: TensorId::fresh(),
                shape,
                data,
                requires_grad: track,
                parents: if track { parents } else { Vec::new() },
                backward: if track { Some(backward) } else { None },
                op,
                root_spent: AtomicBool::new(false),
            }),
        }
    }

    pub fn id(&self) -> TensorId {
        self.node.id
    }

    pub fn shape(&self) -> &TensorShape {
        &self.node.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.node.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.node.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.node.shape.numel()
    }

    pub fn data(&self) -> &[E] {
        &self.node.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<E>> {
        Arc::clone(&self.node.data)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn op_name(&self) -> &'static str {
        self.node.op
    }

    pub(crate) fn parents(&self) -> &[Tensor<E>] {
        &self.node.parents
    }

    pub(crate) fn backward_fn(&self) -> Option<&BackwardFn<E>> {
        self.node.backward.as_ref()
    }

    pub(crate) fn mark_root_spent(&self) -> bool {
        self.node.root_spent.swap(true, Ordering::SeqCst)
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.numel() != 1 {
            return Err(Error::InvalidArg {
                op: "item",
                msg: format!("expected one element, shape is {}", self.shape()),
            });
        }
        Ok(self.node.data[0])
    }

    /// Element at a full multi-index (test convenience).
    pub fn at(&self, index: &[usize]) -> E {
        let dims = self.dims();
        assert_eq!(index.len(), dims.len(), "index rank mismatch");
        let mut flat = 0usize;
        for (i, (&ix, &d)) in index.iter().zip(dims).enumerate() {
            assert!(ix < d, "index {ix} out of range for axis {i} (extent {d})");
            flat = flat * d + ix;
        }
        self.node.data[flat]
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.node.data.as_ref().clone()
    }

    /// Same values in another precision; the result is a fresh leaf.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        let data = self.data().iter().map(|v| F::from_f64(v.as_f64())).collect();
        Tensor::leaf(data, self.shape().clone(), false)
    }
}
