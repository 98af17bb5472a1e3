use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{AutogradError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Backward rule of a recorded op: maps the gradient of the op's output to
/// one optional gradient per input (in input order).
pub type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Scalar> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    is_leaf: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

struct Inner<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Append-only record of a forward computation.
///
/// Node ids grow monotonically, so the node order is already a topological
/// order and backward is a single reverse sweep. A tape is single-threaded;
/// independent tapes on independent threads do not interact.
pub struct Tape<T: Scalar> {
    inner: RefCell<Inner<T>>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
            }),
        }
    }

    /// Records an input tensor. Only leaves created with
    /// `requires_grad = true` receive gradients.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push_node(Node {
            value: Rc::new(value),
            requires_grad,
            is_leaf: true,
            parents: Vec::new(),
            backward: None,
        })
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records the result of a custom operation.
    ///
    /// `backward` is dropped without being called when none of `inputs`
    /// participates in differentiation.
    pub fn record<'t, F>(
        &'t self,
        inputs: &[Var<'t, T>],
        value: Tensor<T>,
        backward: F,
    ) -> Var<'t, T>
    where
        F: FnOnce(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let requires_grad = inputs.iter().any(|v| v.requires_grad());
        let backward: Option<BackwardFn<T>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push_node(Node {
            value: Rc::new(value),
            requires_grad,
            is_leaf: false,
            parents: inputs.iter().map(|v| v.id).collect(),
            backward,
        })
    }

    fn push_node(&self, node: Node<T>) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    /// Propagates d`loss`/d(leaf) for every `requires_grad` leaf.
    ///
    /// Backward closures are consumed, so a second call on the same tape
    /// fails with [`AutogradError::TapeConsumed`].
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(AutogradError::ForeignVar);
        }
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(AutogradError::TapeConsumed);
        }
        let loss_node = &inner.nodes[loss.id];
        if loss_node.value.len() != 1 {
            return Err(AutogradError::NonScalarLoss(
                loss_node.value.shape().to_vec(),
            ));
        }
        inner.consumed = true;

        let n = inner.nodes.len();
        let mut pending: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        if inner.nodes[loss.id].requires_grad {
            pending[loss.id] = Some(Tensor::ones(inner.nodes[loss.id].value.shape()));
        }

        for id in (0..=loss.id).rev() {
            let Some(grad) = pending[id].take() else {
                continue;
            };
            let node = &mut inner.nodes[id];
            if node.is_leaf {
                if node.requires_grad {
                    leaf_grads[id] = Some(grad);
                }
                continue;
            }
            let Some(rule) = node.backward.take() else {
                continue;
            };
            let parents = node.parents.clone();
            let input_grads = rule(&grad);
            debug_assert_eq!(input_grads.len(), parents.len());
            for (pid, g) in parents.into_iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !inner.nodes[pid].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), inner.nodes[pid].value.shape());
                match &mut pending[pid] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Shared handle to the forward value.
    pub fn value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.inner.borrow().nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id]
            .value
            .shape()
            .to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Value of a one-element variable.
    pub fn item(&self) -> T {
        self.tape.inner.borrow().nodes[self.id].value.item()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, or `None` when the leaf does not require grad or
    /// did not influence the loss.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of a leaf, with zeros substituted when it did not influence
    /// the loss.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec(), &[v.len()]).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let tape = Tape::new();
        let x = tape.param(t(&[1.0, -2.0, 3.0]));
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_at_three() {
        let tape = Tape::new();
        let x = tape.param(t(&[3.0]));
        let loss = x.mul(x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.param(t(&[2.0]));
        let y = x.scale(3.0);
        let z = x.add(y).unwrap().add(x).unwrap();
        let g = tape.backward(z.sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn constants_never_get_gradients() {
        let tape = Tape::new();
        let x = tape.param(t(&[1.0, 2.0]));
        let c = tape.constant(t(&[5.0, 7.0]));
        let loss = x.mul(c).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[5.0, 7.0]);
    }

    #[test]
    fn second_backward_is_an_error() {
        let tape = Tape::new();
        let x = tape.param(t(&[1.0]));
        let loss = x.sum();
        tape.backward(loss).unwrap();
        assert_eq!(
            tape.backward(loss).unwrap_err(),
            AutogradError::TapeConsumed
        );
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.param(t(&[1.0, 2.0]));
        assert!(matches!(
            tape.backward(x).unwrap_err(),
            AutogradError::NonScalarLoss(_)
        ));
    }
}
