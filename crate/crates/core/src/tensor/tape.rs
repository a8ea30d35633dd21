use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::error::{bail, Result};

/// Maps the upstream gradient to one optional gradient per parent. The
/// second argument says which parents actually need one.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    shape: Vec<usize>,
    value: Rc<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Recording of one forward pass.
///
/// Nodes are appended in execution order, so parents always precede their
/// children and a reverse sweep is a valid topological order.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    backward_done: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copies `tensor` onto the tape. Gradients are tracked when the tensor
    /// was marked as requiring them.
    pub fn leaf(&self, tensor: &Tensor) -> Var<'_> {
        self.push(
            tensor.shape().to_vec(),
            Rc::new(tensor.data().to_vec()),
            tensor.requires_grad(),
            Vec::new(),
            None,
        )
    }

    pub fn constant(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var<'_>> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            bail!(Dimension, "constant of shape {:?} given {} values", shape, data.len());
        }
        Ok(self.push(shape, Rc::new(data), false, Vec::new(), None))
    }

    pub fn zeros(&self, shape: Vec<usize>) -> Var<'_> {
        let n = shape.iter().product();
        self.push(shape, Rc::new(vec![0.0; n]), false, Vec::new(), None)
    }

    pub(crate) fn record(
        &self,
        shape: Vec<usize>,
        value: Vec<f64>,
        parents: &[Var<'_>],
        backward: BackwardFn,
    ) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let ids = parents.iter().map(|p| p.id).collect();
        let backward = requires_grad.then_some(backward);
        self.push(shape, Rc::new(value), requires_grad, ids, backward)
    }

    fn push(
        &self,
        shape: Vec<usize>,
        value: Rc<Vec<f64>>,
        requires_grad: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> Var<'_> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            requires_grad,
            parents,
            backward,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Reverse sweep from a scalar root. Gradients of shared inputs are
    /// summed. A tape supports a single backward pass.
    pub fn backward(&self, root: &Var<'_>) -> Result<Gradients> {
        if self.backward_done.replace(true) {
            bail!(Validation, "backward already ran on this tape");
        }
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.len() != 1 {
            bail!(
                Dimension,
                "backward root must be scalar, has shape {:?}",
                nodes[root.id].shape
            );
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let needs: Vec<bool> = node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].requires_grad)
                    .collect();
                let parent_grads = backward(&g, &needs);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                    let Some(pg) = pg else { continue };
                    if !need {
                        continue;
                    }
                    match &mut grads[p] {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            // Leaves keep their gradient; interior buffers are released.
            if node.parents.is_empty() {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    pub(crate) fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Vec<f64>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn value(&self) -> Rc<Vec<f64>> {
        self.tape.value_of(self.id)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.value().as_ref().clone()
    }

    /// The single value of a scalar node.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape(), self.to_vec()).expect("tape node shape is consistent")
    }
}

/// Output of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf, if any flowed into it.
    pub fn get(&self, var: &Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }
}
