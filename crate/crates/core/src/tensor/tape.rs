//! Reverse-mode differentiation over whole tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Each recorded
//! node keeps its value and a closure that maps the gradient of its output
//! onto gradients of its inputs. The tape is rebuilt for every forward pass;
//! nodes are appended in topological order, so [`Tape::backward`] is a single
//! reverse sweep.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::value::Tensor;
use crate::error::{Error, Result};

/// Arguments handed to a node's backward closure.
pub(crate) struct BackwardArgs<'a> {
    pub inputs: &'a [Rc<Tensor>],
    pub output: &'a Tensor,
    pub grad: &'a [f64],
}

/// Input-gradient buffers, `None` for inputs that do not need gradients.
pub(crate) type GradSlots = [Option<Vec<f64>>];

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>, &mut GradSlots)>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Recording of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a value that never accumulates gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None, false)
    }

    /// Records a differentiable leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None, true)
    }

    pub(crate) fn push(
        &self,
        value: Tensor,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward,
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// Records the result of an operation over `inputs`.
    pub(crate) fn op(&self, value: Tensor, inputs: &[Var<'_>], backward: BackwardFn) -> Var<'_> {
        let parents: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        if requires_grad {
            self.push(value, parents, Some(backward), true)
        } else {
            self.push(value, parents, None, false)
        }
    }

    /// Propagates gradients from a scalar `loss` to every node that requires them.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let inputs: Vec<Rc<Tensor>> =
                    node.parents.iter().map(|&p| nodes[p].value.clone()).collect();
                let mut slots: Vec<Option<Vec<f64>>> = node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].requires_grad.then(|| vec![0.0; nodes[p].value.len()]))
                    .collect();
                backward(
                    &BackwardArgs {
                        inputs: &inputs,
                        output: &node.value,
                        grad: &grad,
                    },
                    &mut slots,
                );
                for (&p, slot) in node.parents.iter().zip(slots) {
                    if let Some(g) = slot {
                        match &mut grads[p] {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            empty => *empty = Some(g),
                        }
                    }
                }
            }
            // Only leaves keep their gradients.
            if node.backward.is_none() && node.requires_grad {
                grads[id] = Some(grad);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of one backward pass, indexed by leaf.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a leaf; `None` when the leaf is a constant
    /// or unreachable from the loss.
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Vec<f64>> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value; panics on non-scalars.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on shape {:?}", v.shape());
        v.data()[0]
    }
}
