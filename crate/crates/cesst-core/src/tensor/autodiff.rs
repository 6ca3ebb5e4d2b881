//! Reverse-mode differentiation over the recorded op graph.

use std::collections::{HashMap, HashSet};

use super::{Element, Tensor, TensorId, TensorShape};
use crate::error::{Error, Result};

/// Gradients keyed by tensor id, produced by one reverse pass.
pub struct GradStore<E: Element> {
    grads: HashMap<TensorId, (TensorShape, Vec<E>)>,
}

impl<E: Element> GradStore<E> {
    pub fn get(&self, t: &Tensor<E>) -> Option<&[E]> {
        self.grads.get(&t.id()).map(|(_, g)| g.as_slice())
    }

    /// Gradient wrapped as a plain (untracked) tensor.
    pub fn grad_tensor(&self, t: &Tensor<E>) -> Option<Tensor<E>> {
        self.grads
            .get(&t.id())
            .map(|(shape, g)| Tensor::leaf(g.clone(), shape.clone(), false))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Ordered record of the ops reachable from a scalar root; reverse iteration
/// is a valid topological order for gradient propagation.
pub struct GradTape<E: Element> {
    root: Tensor<E>,
    order: Vec<Tensor<E>>,
}

impl<E: Element> GradTape<E> {
    /// Trace the graph below `root`. Only gradient-tracking nodes are kept.
    pub fn trace(root: &Tensor<E>) -> Result<Self> {
        if root.numel() != 1 {
            return Err(Error::NonScalarRoot(root.numel()));
        }
        let mut order: Vec<Tensor<E>> = Vec::new();
        let mut seen: HashSet<TensorId> = HashSet::new();
        // Iterative post-order DFS; graph depth can exceed the stack.
        let mut stack: Vec<(Tensor<E>, usize)> = vec![(root.clone(), 0)];
        seen.insert(root.id());
        while let Some((node, child)) = stack.pop() {
            let parents = node.parents();
            if child < parents.len() {
                stack.push((node.clone(), child + 1));
                let p = &parents[child];
                if p.requires_grad() && !seen.contains(&p.id()) {
                    seen.insert(p.id());
                    stack.push((p.clone(), 0));
                }
            } else {
                order.push(node);
            }
        }
        Ok(GradTape {
            root: root.clone(),
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Run the reverse pass. Errors if this root was already differentiated.
    pub fn run(self) -> Result<GradStore<E>> {
        if self.root.mark_root_spent() {
            return Err(Error::TapeSpent);
        }
        let mut grads: HashMap<TensorId, (TensorShape, Vec<E>)> = HashMap::new();
        grads.insert(
            self.root.id(),
            (self.root.shape().clone(), vec![E::one(); 1]),
        );

        for node in self.order.iter().rev() {
            let Some(backward) = node.backward_fn() else {
                continue;
            };
            let Some((_, grad_out)) = grads.get(&node.id()) else {
                continue;
            };
            let parent_grads = backward(grad_out);
            debug_assert_eq!(parent_grads.len(), node.parents().len());
            for (parent, pg) in node.parents().iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), parent.numel(), "{}: bad grad size", node.op_name());
                if super::finite_checks_enabled() && pg.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
                match grads.entry(parent.id()) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        for (a, b) in e.get_mut().1.iter_mut().zip(&pg) {
                            *a += *b;
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert((parent.shape().clone(), pg));
                    }
                }
            }
        }
        Ok(GradStore { grads })
    }
}

impl<E: Element> Tensor<E> {
    /// Reverse pass from a scalar loss; returns gradients for every tensor
    /// on the tape (leaves included). A second call on the same root errors.
    pub fn backward(&self) -> Result<GradStore<E>> {
        GradTape::trace(self)?.run()
    }
}
