//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in creation order, so the tape is already a
//! topological order; `backward` walks it once in reverse. Gradients of
//! leaves accumulate across `backward` calls until [`Graph::zero_grad`].

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{invalid, Result};

use super::array::Tensor;
use super::scalar::Scalar;

/// Maps the upstream gradient to one gradient per parent. `needs[i]` is
/// false when parent `i` does not require a gradient; the closure may
/// return `None` for it.
pub(crate) type BackwardFn<S> = Box<dyn Fn(&Tensor<S>, &[bool]) -> Vec<Option<Tensor<S>>>>;

struct Node<S> {
    value: Rc<Tensor<S>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<S>>,
    requires_grad: bool,
    grad: Option<Tensor<S>>,
}

/// A differentiable computation record.
pub struct Graph<S> {
    nodes: RefCell<Vec<Node<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<S>, requires_grad: bool) -> Var<'_, S> {
        self.insert(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
            grad: None,
        })
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor<S>) -> Var<'_, S> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.leaf(value, false)
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    fn insert(&self, node: Node<S>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn record(
        &self,
        value: Tensor<S>,
        parents: &[Var<'_, S>],
        backward: impl Fn(&Tensor<S>, &[bool]) -> Vec<Option<Tensor<S>>> + 'static,
    ) -> Var<'_, S> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let backward: Option<BackwardFn<S>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.insert(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward,
            requires_grad,
            grad: None,
        })
    }

    fn backward_from(&self, root: usize) -> Result<()> {
        let mut leaf_grads: Vec<(usize, Tensor<S>)> = Vec::new();
        {
            let nodes = self.nodes.borrow();
            let root_node = &nodes[root];
            if root_node.value.numel() != 1 {
                return Err(invalid(
                    "backward",
                    format!("loss must be a scalar, got shape {:?}", root_node.value.shape()),
                ));
            }
            if !root_node.requires_grad {
                return Ok(());
            }
            let mut grads: Vec<Option<Tensor<S>>> = (0..=root).map(|_| None).collect();
            grads[root] = Some(Tensor::ones(root_node.value.shape()));
            for id in (0..=root).rev() {
                let Some(upstream) = grads[id].take() else {
                    continue;
                };
                let node = &nodes[id];
                match &node.backward {
                    None => {
                        if node.requires_grad {
                            leaf_grads.push((id, upstream));
                        }
                    }
                    Some(f) => {
                        let needs: Vec<bool> =
                            node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
                        let parent_grads = f(&upstream, &needs);
                        debug_assert_eq!(parent_grads.len(), node.parents.len());
                        for ((&p, g), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                            let Some(g) = g.filter(|_| need) else { continue };
                            debug_assert_eq!(g.shape(), nodes[p].value.shape());
                            match &mut grads[p] {
                                Some(acc) => acc.add_assign(&g),
                                slot => *slot = Some(g),
                            }
                        }
                    }
                }
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, S> {
    pub(crate) graph: &'g Graph<S>,
    pub(crate) id: usize,
}

impl<S> fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<'g, S: Scalar> Var<'g, S> {
    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<S>> {
        Rc::clone(&self.graph.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Tensor<S>> {
        self.graph.nodes.borrow()[self.id].grad.clone()
    }

    /// Same value, cut off from the gradient flow.
    pub fn detach(&self) -> Var<'g, S> {
        let value = self.value();
        self.graph.constant((*value).clone())
    }

    /// Backpropagates from this scalar into every `requires_grad` leaf.
    pub fn backward(&self) -> Result<()> {
        self.graph.backward_from(self.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[2, 2]));
        assert!(x.backward().is_err());
    }

    #[test]
    fn gradients_accumulate_until_reset() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let loss = x.sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 2.0, 2.0]);
        g.zero_grad();
        assert!(x.grad().is_none());
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn shared_subexpression_visited_once_per_path() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&[2], vec![3.0, -1.0]).unwrap());
        let y = x.mul(x).unwrap();
        let loss = y.add(x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[7.0, -1.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[2]));
        let c = g.constant(Tensor::full(&[2], 4.0));
        x.mul(c).unwrap().sum().backward().unwrap();
        assert!(c.grad().is_none());
        assert_eq!(x.grad().unwrap().data(), &[4.0, 4.0]);
    }
}
