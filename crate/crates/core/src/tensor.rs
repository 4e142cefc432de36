//! N-dimensional f32 tensors participating in a recorded differentiation
//! graph.
//!
//! A `Tensor` is an immutable row-major buffer plus an optional handle into
//! the computation graph that produced it. Graph nodes are created whenever
//! an operation runs with gradient recording enabled and at least one input
//! is itself part of a graph; see [`crate::autograd`] for the backward pass.
//!
//! Every operation validates that its output is finite. NaN or Inf anywhere
//! is treated as a programming or divergence error and panics immediately
//! rather than propagating silently.

use std::cell::Cell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::ops::Op;

static NEXT_NODE_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on the current thread.
///
/// Operations executed inside produce plain tensors with no graph nodes,
/// which keeps evaluation-only code paths cheap.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// A recorded operation: what produced a tensor and from which inputs.
pub(crate) struct Node {
    pub id: u64,
    pub op: Op,
    pub inputs: Vec<Tensor>,
}

impl Drop for Node {
    // Graphs can be thousands of nodes deep; unlink iteratively so that
    // dropping the last tensor of a training step cannot overflow the stack.
    fn drop(&mut self) {
        let mut stack = std::mem::take(&mut self.inputs);
        while let Some(t) = stack.pop() {
            if let Some(rc) = t.into_node() {
                if let Ok(mut node) = Rc::try_unwrap(rc) {
                    stack.append(&mut node.inputs);
                }
            }
        }
    }
}

/// Immutable row-major f32 array, optionally attached to a graph node.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
    node: Option<Rc<Node>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn assert_finite(data: &[f32], ctx: &str) {
    // Cheap linear scan; hot kernels dominate runtime by far.
    if let Some(v) = data.iter().find(|v| !v.is_finite()) {
        panic!("non-finite value {v} produced by {ctx}");
    }
}

impl Tensor {
    /// Builds a tensor from raw data. Panics if the element count does not
    /// match the shape or any element is non-finite.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Tensor {
        assert_eq!(
            numel(shape),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        assert!(!data.is_empty(), "zero-element tensors are not supported");
        assert_finite(&data, "from_vec");
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::from_vec(&[1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, vec![0.0; numel(shape)])
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f32) -> Tensor {
        Tensor::from_vec(shape, vec![v; numel(shape)])
    }

    /// Internal constructor used by every operation.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f32>, op: Op, inputs: Vec<Tensor>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        assert_finite(&data, op.name());
        let node = if grad_enabled() && inputs.iter().any(|t| t.node.is_some()) {
            Some(Rc::new(Node {
                id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
                op,
                inputs,
            }))
        } else {
            None
        };
        Tensor {
            shape,
            data: Arc::new(data),
            node,
        }
    }

    /// Marks this tensor as a differentiation leaf: the returned tensor has
    /// a fresh graph node, and gradients can be requested for it.
    pub fn tracked(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: Some(Rc::new(Node {
                id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
                op: Op::Leaf,
                inputs: Vec::new(),
            })),
        }
    }

    /// Same data, no graph node.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f32>> {
        self.data.clone()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data.to_vec()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node(&self) -> Option<&Rc<Node>> {
        self.node.as_ref()
    }

    pub(crate) fn node_id(&self) -> Option<u64> {
        self.node.as_ref().map(|n| n.id)
    }

    fn into_node(mut self) -> Option<Rc<Node>> {
        self.node.take()
    }

    /// Reuses the data buffer with a new shape (no graph participation);
    /// used internally where a pure metadata change is needed.
    pub(crate) fn with_shape_raw(&self, shape: Vec<usize>) -> Tensor {
        debug_assert_eq!(numel(&shape), self.data.len());
        Tensor {
            shape,
            data: self.data.clone(),
            node: None,
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", &self.data[..])?;
        }
        if self.node.is_some() {
            write!(f, " (tracked)")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_shape() {
        let t = Tensor::from_vec(&[2, 3], vec![0.0; 6]);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.numel(), 6);
    }

    #[test]
    #[should_panic(expected = "does not match")]
    fn from_vec_rejects_bad_length() {
        let _ = Tensor::from_vec(&[2, 3], vec![0.0; 5]);
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn from_vec_rejects_nan() {
        let _ = Tensor::from_vec(&[2], vec![1.0, f32::NAN]);
    }

    #[test]
    fn tracked_and_detach() {
        let t = Tensor::zeros(&[4]);
        assert!(!t.is_tracked());
        let l = t.tracked();
        assert!(l.is_tracked());
        assert!(!l.detach().is_tracked());
    }

    #[test]
    fn deep_graph_drop_does_not_overflow() {
        let mut t = Tensor::scalar(1.0).tracked();
        for _ in 0..200_000 {
            t = crate::ops::scale(&t, 1.0);
        }
        drop(t);
    }
}
