//! Define-by-run reverse-mode differentiation.
//!
//! Every differentiable primitive pushes one node onto a [`Tape`]: the forward
//! value, its parent node ids and a closure mapping the output gradient to
//! the parents' gradients. [`Tape::backward`] walks the nodes in reverse
//! insertion order, which is a valid reverse topological order because a node
//! can only reference nodes recorded before it.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// Maps the output gradient to one optional gradient per parent. The flags
/// tell the rule which parents actually need a gradient.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Recording of one forward pass. Confined to a single thread.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape that never records backward rules, for inference.
    pub fn no_grad() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad: requires_grad && self.grad_enabled,
            parents: Vec::new(),
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable input.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor,
        parents: &[Var<'t>],
        backward: impl Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    ) -> Var<'t> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad =
            self.grad_enabled && parents.iter().any(|p| nodes[p.id].requires_grad);
        nodes.push(Node {
            value,
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Propagates `seed` (ones when `None`) from `output` back to every leaf
    /// that requires a gradient. Intermediate gradients are dropped as soon as
    /// they have been pushed to their parents.
    pub fn backward(&self, output: Var<'_>, seed: Option<&Tensor>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.id].value.shape();
        let seed = match seed {
            Some(s) if s.shape() != out_shape => {
                return shape_err(
                    "backward",
                    format!("seed {:?} vs output {:?}", s.shape(), out_shape),
                )
            }
            Some(s) => s.clone(),
            None => Tensor::ones(out_shape),
        };

        let mut pending: Vec<Option<Vec<f64>>> = vec![None; output.id + 1];
        pending[output.id] = Some(seed.into_vec());
        let mut leaves = HashMap::new();

        for id in (0..=output.id).rev() {
            let Some(g) = pending[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = Tensor::from_vec(node.value.shape(), g);
            let Some(rule) = &node.backward else {
                leaves.insert(id, g);
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = rule(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(pg), true) = (pg, *need) else { continue };
                debug_assert_eq!(pg.shape(), nodes[p].value.shape());
                match &mut pending[p] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(pg.into_vec()),
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Handle to a node on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Shape {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut off from the tape.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients of the differentiated output with respect to each leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: &Var<'_>) -> Option<&Tensor> {
        self.grads.get(&var.id)
    }

    /// Gradient for `var`, or zeros when the output does not depend on it.
    pub fn wrt(&self, var: &Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
