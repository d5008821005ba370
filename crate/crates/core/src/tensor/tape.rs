//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]. Nodes are
//! stored in creation order, which is a topological order: an operation can
//! only reference vars that already exist. [`Tape::backward`] walks the
//! nodes in reverse and accumulates vector-Jacobian products into each
//! node's gradient slot.

use std::cell::RefCell;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Vector-Jacobian product of one recorded operation. Receives the
/// upstream gradient and a mask of which inputs need a gradient; returns
/// one entry per input, `None` where nothing flows.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Scalar> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
}

/// Record of operations; confined to one thread.
pub struct Tape<T: Scalar> {
    inner: RefCell<TapeInner<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a tensor recorded on a tape.
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

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(TapeInner {
                nodes: Vec::new(),
                grads: Vec::new(),
                consumed: false,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    /// Differentiable leaf.
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value: Rc::new(value),
            parents: vec![],
            backward: None,
            requires_grad: true,
        })
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value: Rc::new(value),
            parents: vec![],
            backward: None,
            requires_grad: false,
        })
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(v))
    }

    /// Records an operation. The backward function is dropped when no
    /// input requires a gradient.
    pub fn op<'t>(
        &'t self,
        value: Tensor<T>,
        inputs: &[Var<'t, T>],
        backward: BackwardFn<T>,
    ) -> Var<'t, T> {
        debug_assert!(inputs.iter().all(|v| std::ptr::eq(v.tape, self)));
        let requires_grad = {
            let inner = self.inner.borrow();
            inputs.iter().any(|v| inner.nodes[v.id].requires_grad)
        };
        self.push(Node {
            value: Rc::new(value),
            parents: inputs.iter().map(|v| v.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        })
    }

    /// Populates gradients of `loss` with respect to every var that
    /// requires one. A tape can be differentiated once until
    /// [`Tape::reset_grads`] is called.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = inner.nodes[loss.id].value.shape().to_vec();
        if inner.nodes[loss.id].value.numel() != 1 {
            return Err(Error::NotScalar(shape));
        }
        let n = inner.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(shape));
        for id in (0..=loss.id).rev() {
            let node = &inner.nodes[id];
            let (Some(back), Some(g)) = (node.backward.as_ref(), grads[id].as_ref()) else {
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| inner.nodes[p].requires_grad)
                .collect();
            let parent_grads = back(g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.shape(), inner.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        for (id, g) in grads.iter_mut().enumerate() {
            if !inner.nodes[id].requires_grad {
                *g = None;
            }
        }
        inner.grads = grads;
        inner.consumed = true;
        Ok(())
    }

    /// Clears gradients so the tape can be differentiated again.
    pub fn reset_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.grads.clear();
        inner.consumed = false;
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id]
            .value
            .shape()
            .to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].value.numel()
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Gradient after [`Tape::backward`]; a var that requires a gradient
    /// but is unreachable from the loss gets zeros.
    pub fn grad(&self) -> Option<Tensor<T>> {
        let inner = self.tape.inner.borrow();
        if !inner.consumed || !inner.nodes[self.id].requires_grad {
            return None;
        }
        Some(
            inner.grads[self.id]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(inner.nodes[self.id].value.shape().to_vec())),
        )
    }
}
