//! Reverse-mode differentiation over the recorded graph.
//!
//! [`backward`] walks the graph from a scalar in reverse topological order
//! and accumulates vector-Jacobian products. With `create_graph` the
//! backward computation is itself recorded, so the returned gradients can
//! be differentiated again; the path-length and R1 regularizers rely on
//! this.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::ops;
use crate::tensor::{no_grad, Node, Tensor};

/// Gradients per leaf, keyed by graph node.
pub struct Gradients {
    map: HashMap<u64, Tensor>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        t.node_id().and_then(|id| self.map.get(&id))
    }

    /// Like [`Gradients::get`] but panics when the tensor was not reachable
    /// from the backward target.
    pub fn require(&self, t: &Tensor) -> Tensor {
        self.get(t)
            .cloned()
            .unwrap_or_else(|| panic!("leaf not reachable from backward target"))
    }
}

/// Computes d(loss)/d(leaf) for every tensor in `wanted`.
///
/// `loss` must be scalar-shaped and part of a graph. When `create_graph` is
/// true, the operations performed during the backward pass are recorded so
/// the resulting gradients support another [`backward`] call.
pub fn backward(loss: &Tensor, wanted: &[&Tensor], create_graph: bool) -> Gradients {
    assert_eq!(loss.numel(), 1, "backward target must be scalar-shaped");
    let root = loss
        .node()
        .expect("backward target is not part of a differentiation graph")
        .clone();

    // Reachable subgraph, then mark the nodes that can reach a wanted leaf
    // so no work is spent on gradients nobody asked for.
    let mut nodes: HashMap<u64, Rc<Node>> = HashMap::new();
    let mut stack = vec![root.clone()];
    while let Some(n) = stack.pop() {
        if nodes.insert(n.id, n.clone()).is_some() {
            continue;
        }
        for inp in &n.inputs {
            if let Some(child) = inp.node() {
                if !nodes.contains_key(&child.id) {
                    stack.push(child.clone());
                }
            }
        }
    }

    let wanted_ids: HashSet<u64> = wanted.iter().filter_map(|t| t.node_id()).collect();
    let mut order: Vec<u64> = nodes.keys().copied().collect();
    order.sort_unstable();
    let mut useful: HashSet<u64> = HashSet::new();
    for &id in &order {
        let n = &nodes[&id];
        if wanted_ids.contains(&id)
            || n.inputs
                .iter()
                .any(|i| i.node_id().is_some_and(|cid| useful.contains(&cid)))
        {
            useful.insert(id);
        }
    }
    if !useful.contains(&root.id) {
        return Gradients { map: HashMap::new() };
    }

    let run = |grads: &mut HashMap<u64, Tensor>| {
        grads.insert(root.id, Tensor::ones(loss.shape()));
        for &id in order.iter().rev() {
            if !useful.contains(&id) {
                continue;
            }
            let n = &nodes[&id];
            // The gradient of a non-leaf node is only needed while visiting
            // it; wanted intermediates keep theirs.
            let g = if wanted_ids.contains(&id) {
                match grads.get(&id) {
                    Some(g) => g.clone(),
                    None => continue,
                }
            } else {
                match grads.remove(&id) {
                    Some(g) => g,
                    None => continue,
                }
            };
            if n.inputs.is_empty() {
                continue;
            }
            let needs: Vec<bool> = n
                .inputs
                .iter()
                .map(|i| i.node_id().is_some_and(|cid| useful.contains(&cid)))
                .collect();
            if !needs.iter().any(|&b| b) {
                continue;
            }
            let input_grads = n.op.vjp(&n.inputs, &g, &needs);
            debug_assert_eq!(input_grads.len(), n.inputs.len());
            for (inp, gi) in n.inputs.iter().zip(input_grads) {
                let Some(gi) = gi else { continue };
                debug_assert_eq!(gi.shape(), inp.shape(), "{} vjp shape", n.op.name());
                let cid = inp.node_id().expect("needed input has a node");
                match grads.remove(&cid) {
                    Some(acc) => {
                        grads.insert(cid, ops::add(&acc, &gi));
                    }
                    None => {
                        grads.insert(cid, gi);
                    }
                }
            }
        }
    };

    let mut grads = HashMap::new();
    if create_graph {
        run(&mut grads);
    } else {
        no_grad(|| run(&mut grads));
    }
    grads.retain(|id, _| wanted_ids.contains(id));
    Gradients { map: grads }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::*;

    #[test]
    fn square_grad() {
        // f(x) = x^2 at x=3 -> 6
        let x = Tensor::scalar(3.0).tracked();
        let y = square(&x);
        let g = backward(&y, &[&x], false);
        assert_eq!(g.require(&x).item(), 6.0);
    }

    #[test]
    fn grad_of_grad_cubic() {
        // f(x) = x^3, f''(2) = 12
        let x = Tensor::scalar(2.0).tracked();
        let y = mul(&square(&x), &x);
        let g1 = backward(&y, &[&x], true).require(&x);
        let g2 = backward(&g1, &[&x], false).require(&x);
        assert!((g2.item() - 12.0).abs() < 1e-5, "{}", g2.item());
    }

    #[test]
    fn fanout_accumulates() {
        // f(x) = x*x + 2x, f'(5) = 12
        let x = Tensor::scalar(5.0).tracked();
        let y = add(&mul(&x, &x), &scale(&x, 2.0));
        let g = backward(&y, &[&x], false);
        assert_eq!(g.require(&x).item(), 12.0);
    }

    #[test]
    fn unreachable_leaf_is_none() {
        let x = Tensor::scalar(1.0).tracked();
        let z = Tensor::scalar(1.0).tracked();
        let y = square(&x);
        let g = backward(&y, &[&x, &z], false);
        assert!(g.get(&z).is_none());
    }

    #[test]
    #[should_panic(expected = "leaf not reachable")]
    fn require_unreachable_panics() {
        let x = Tensor::scalar(1.0).tracked();
        let z = Tensor::scalar(1.0).tracked();
        let y = square(&x);
        backward(&y, &[&x], false).require(&z);
    }

    #[test]
    #[should_panic(expected = "scalar")]
    fn non_scalar_loss_panics() {
        let x = Tensor::ones(&[3]).tracked();
        let y = square(&x);
        backward(&y, &[&x], false);
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let x = Tensor::scalar(2.0).tracked();
        let y = crate::tensor::no_grad(|| square(&x));
        assert!(!y.is_tracked());
    }

    #[test]
    fn grad_through_mean_and_broadcast() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).tracked();
        let b = broadcast_to(&reshape(&x, &[1, 2]), &[3, 2]);
        let y = mean_all(&b);
        let g = backward(&y, &[&x], false).require(&x);
        // each element appears 3 times out of 6
        assert_eq!(g.to_vec(), vec![0.5, 0.5]);
    }
}
