use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::element::Element;
use crate::error::{shape_err, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph edges on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Vector-Jacobian product of one recorded op: maps the gradient of the op's
/// output to one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

pub(crate) struct GradFn<T: Element> {
    pub(crate) name: &'static str,
    pub(crate) parents: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

pub(crate) struct Node<T: Element> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad_fn: Option<GradFn<T>>,
}

/// Immutable n-dimensional array, row-major, optionally attached to a
/// reverse-mode differentiation graph. Cloning is cheap.
pub struct Tensor<T: Element = f32> {
    pub(crate) node: Arc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { node: Arc::clone(&self.node) }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.node.grad_fn.as_ref().map(|g| g.name).unwrap_or("leaf");
        write!(f, "Tensor{{shape: {:?}, op: {op}, requires_grad: {}", self.shape(), self.requires_grad())?;
        if self.numel() <= 8 {
            write!(f, ", data: {:?}", self.data())?;
        }
        write!(f, "}}")
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn make(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return shape_err(format!("{} values do not fill shape {:?}", data.len(), shape));
        }
        Ok(Self::make(data, shape.to_vec(), false, None))
    }

    /// Leaf tensor that collects gradients (a trainable parameter).
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return shape_err(format!("{} values do not fill shape {:?}", data.len(), shape));
        }
        Ok(Self::make(data, shape.to_vec(), true, None))
    }

    pub fn from_f64s(values: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(values.iter().map(|&v| T::from_f64_lossy(v)).collect(), shape)
    }

    pub fn scalar(v: T) -> Self {
        Self::make(vec![v], Vec::new(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::make(vec![T::zero(); numel_of(shape)], shape.to_vec(), false, None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::make(vec![T::one(); numel_of(shape)], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::make(vec![v; numel_of(shape)], shape.to_vec(), false, None)
    }

    /// Records the result of an op. Graph edges are kept only when gradient
    /// recording is enabled and some parent requires gradients.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        name: &'static str,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Self::make(data, shape, true, Some(GradFn { name, parents, backward }))
        } else {
            Self::make(data, shape, false, None)
        }
    }

    /// Whether any parent tensor tracks gradients; ops use this to skip
    /// building expensive backward context.
    pub(crate) fn tracking(parents: &[&Tensor<T>]) -> bool {
        grad_enabled() && parents.iter().any(|p| p.requires_grad())
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.node.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Name of the op that produced this tensor, or `None` for leaves.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|g| g.name)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return shape_err(format!("item() on tensor of shape {:?}", self.shape()));
        }
        Ok(self.node.data[0])
    }

    /// Value-identical tensor with no graph edge to its origin.
    pub fn detach(&self) -> Self {
        if !self.requires_grad() {
            return self.clone();
        }
        Self::make(self.node.data.clone(), self.node.shape.clone(), false, None)
    }

    /// Same values as a fresh gradient-collecting leaf.
    pub fn to_param(&self) -> Self {
        Self::make(self.node.data.clone(), self.node.shape.clone(), true, None)
    }

    pub fn all_finite(&self) -> bool {
        self.node.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type; the result is a constant.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::make(
            self.node.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            self.node.shape.clone(),
            false,
            None,
        )
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        if self.shape() != other.shape() {
            return shape_err(format!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), |m, d| if d > m { d } else { m }))
    }
}
