//! Dense row-major tensors with tape-free reverse-mode differentiation.
//!
//! Every operation whose inputs require gradients records a [`Node`] holding
//! its parents and a backward closure. [`Tensor::backward`] walks the graph
//! reachable from a scalar loss in reverse topological order, visiting each
//! node once, and accumulates gradients into the leaves.

mod gemm;
pub mod gradcheck;
pub mod io;
mod nn;
mod ops;
mod params;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use nn::{bce_element, focal_element, Conv2dSpec, Pool, LOSS_CLAMP};
pub use params::Parameters;
pub(crate) use params::{constant, join, uniform};

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled on this thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(prev);
    f()
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct Node {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: usize,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// Shared handle to an immutable n-dimensional array.
///
/// Cloning is cheap. Only the gradient accumulator of a leaf ever changes
/// after construction.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op())
            .field("data", &preview)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    /// Constant tensor. Fails when `data.len()` is not the product of `shape`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::dim(format!("extents must be positive, got {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Ok(Self::new(shape, data)?.into_leaf(true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Fresh leaf with the same values; `requires_grad` as given.
    pub fn into_leaf(self, requires_grad: bool) -> Self {
        let data = match Arc::try_unwrap(self.0) {
            Ok(inner) => (inner.shape, inner.data),
            Err(shared) => (shared.shape.clone(), shared.data.clone()),
        };
        Self::build(data.0, data.1, requires_grad, None)
    }

    /// Constant copy cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Records an operation result. The node is kept only when gradient
    /// recording is enabled and some parent requires a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        op: &'static str,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    ) -> Self {
        let requires_grad = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let node = requires_grad.then(|| Node {
            op,
            parents,
            backward: Box::new(backward),
        });
        Self::build(shape, data, requires_grad, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Operation tag for recorded results, `None` for leaves.
    pub fn op(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    /// Single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().unwrap().clone()
    }

    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().unwrap() = None;
    }

    pub fn same_storage(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Populates gradients on every requires-grad leaf reachable from this
    /// scalar. Gradients accumulate across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        Graph::from_root(self).backward(vec![1.0]);
        Ok(())
    }
}

/// Recorded computation reachable from a root, in topological order
/// (inputs before the operations that consume them).
pub struct Graph {
    order: Vec<Tensor>,
}

impl Graph {
    pub fn from_root(root: &Tensor) -> Self {
        let mut order = Vec::new();
        if !root.requires_grad() {
            return Graph { order };
        }
        let mut seen = HashSet::new();
        // Iterative post-order DFS; the bool marks "children already pushed".
        let mut stack = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.0.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for p in node.parents.iter().rev() {
                    if p.requires_grad() && !seen.contains(&p.0.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        Graph { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Operation tags in topological order; leaves show as `"leaf"`.
    pub fn ops(&self) -> Vec<&'static str> {
        self.order.iter().map(|t| t.op().unwrap_or("leaf")).collect()
    }

    fn backward(self, seed: Vec<f64>) {
        let Some(root) = self.order.last() else {
            return;
        };
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(root.0.id, seed);
        for t in self.order.iter().rev() {
            let Some(g) = pending.remove(&t.0.id) else {
                continue;
            };
            match &t.0.node {
                None => {
                    if t.requires_grad() {
                        let mut slot = t.0.grad.lock().unwrap();
                        match slot.as_mut() {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            None => *slot = Some(g),
                        }
                    }
                }
                Some(node) => {
                    let grads = (node.backward)(&g);
                    debug_assert_eq!(grads.len(), node.parents.len(), "op {}", node.op);
                    for (p, gp) in node.parents.iter().zip(grads) {
                        let Some(gp) = gp else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(gp.len(), p.numel(), "op {}", node.op);
                        match pending.get_mut(&p.0.id) {
                            Some(acc) => acc.iter_mut().zip(&gp).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(p.0.id, gp);
                            }
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

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn sum_of_squares_gradient_is_exact() {
        let x = Tensor::param(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0, 6.0]);
    }

    #[test]
    fn reused_input_accumulates() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.add(&x).unwrap();
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn constant_paths_give_zero() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let unused = Tensor::param(&[2], vec![5.0, 6.0]).unwrap();
        let c = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        let loss = x.scale(0.0).add(&c).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);
        assert!(unused.grad().is_none());
        assert_eq!(unused.grad_or_zeros(), vec![0.0, 0.0]);
        // nothing differentiable at all
        let k = c.sum();
        assert!(Graph::from_root(&k).is_empty());
        k.backward().unwrap();
    }

    #[test]
    fn non_scalar_backward_is_contract_error() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let err = x.scale(2.0).backward().unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn graph_visits_each_node_once() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let a = x.scale(2.0);
        let b = a.add(&a).unwrap();
        let c = b.mul(&a).unwrap().sum();
        let g = Graph::from_root(&c);
        assert_eq!(g.len(), 5);
        assert_eq!(g.ops().first(), Some(&"leaf"));
        assert_eq!(g.ops().last(), Some(&"sum"));
    }

    #[test]
    fn no_grad_skips_recording() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| x.scale(3.0));
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
        assert!(x.scale(3.0).requires_grad());
    }
}
