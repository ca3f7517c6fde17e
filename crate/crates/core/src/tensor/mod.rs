//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tensor`] is a reference-counted node in a dynamic graph. Operations on
//! tensors that require gradients record their inputs and whatever they need
//! for the backward pass; [`Tensor::backward`] and [`grad`] then walk the graph
//! in reverse creation order.
//!
//! The engine supports one level of re-entrant differentiation: [`grad`] with
//! `create_graph = true` builds the gradient out of recorded operations, so it
//! can itself be differentiated. Only the operations a point-cloud critic needs
//! (matrix products, bias, LeakyReLU, max pooling and the structural
//! reshapes/reductions) carry that support. Everything else fails with
//! [`TensorError::SecondOrderUnsupported`] when reached in that mode.
//!
//! Feature maps over point sets are laid out channels-last: `[B, N, C]`.

mod autograd;
mod gemm;
pub mod nn;
mod ops;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

pub use autograd::grad;
pub(crate) use ops::Op;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    BadLength { len: usize, shape: Vec<usize> },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0} does not support second-order differentiation")]
    SecondOrderUnsupported(&'static str),
    #[error("output does not depend on the requested input")]
    Disconnected,
    #[error("batch_norm in train mode needs at least 2 samples per channel, got {0}")]
    BatchTooSmall(usize),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct GradModeGuard(bool);

impl GradModeGuard {
    fn set(enabled: bool) -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
        GradModeGuard(prev)
    }
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

/// Runs `f` without recording any operations.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let _guard = GradModeGuard::set(false);
    f()
}

pub(crate) fn with_grad_mode<T>(enabled: bool, f: impl FnOnce() -> T) -> T {
    let _guard = GradModeGuard::set(enabled);
    f()
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Tensor>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// Dense row-major tensor, cheap to clone (clones share storage).
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            node,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Trainable leaf.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(TensorError::BadLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::build(shape.to_vec(), data, requires_grad, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    /// Records the result of an operation. The node is kept only when grad
    /// mode is on and some input requires a gradient.
    pub(crate) fn from_op(
        op: Op,
        inputs: Vec<Tensor>,
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Self> {
        debug_assert_eq!(data.len(), numel(&shape));
        if cfg!(debug_assertions) && data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(op.name()));
        }
        let track = is_grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        let node = track.then_some(Node { op, inputs });
        Ok(Self::build(shape, data, track, node))
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.0.node.as_ref()
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Mutable access to the values. Meant for leaves (optimizer updates,
    /// running statistics); mutating a tensor that a live graph saved for
    /// backward changes what that backward computes.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    /// Accumulated gradient of a leaf after [`Tensor::backward`].
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Constant copy of the values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    /// Copy of the values as a new leaf with the given gradient flag.
    pub fn detach_with_grad(&self, requires_grad: bool) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), requires_grad, None)
    }

    /// Propagates from a scalar loss and accumulates into every leaf that
    /// requires a gradient.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        autograd::backward_with_seed(self, Tensor::full(self.shape(), 1.0))
    }

    /// Backward pass from a non-scalar output with an explicit upstream gradient.
    pub fn backward_with(&self, seed: &Tensor) -> Result<()> {
        if seed.shape() != self.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "backward_with",
                lhs: self.shape().to_vec(),
                rhs: seed.shape().to_vec(),
            });
        }
        autograd::backward_with_seed(self, seed.detach())
    }
}
