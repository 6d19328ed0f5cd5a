//! Wengert tape for reverse-mode differentiation.
//!
//! Ops append nodes in execution order, so node ids are already a
//! topological order; backward walks ids in reverse and visits each
//! node exactly once. Gradients sum over fan-out.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::shape::numel;
use crate::tensor::Tensor;

/// Accumulates parent gradients during the reverse sweep.
pub struct Grads<'a, T: Scalar> {
    slots: &'a mut [Option<Vec<T>>],
    sizes: &'a [usize],
}

impl<'a, T: Scalar> Grads<'a, T> {
    /// Gradient buffer for node `id`, zero-initialized on first touch.
    pub fn slot(&mut self, id: usize) -> &mut [T] {
        if self.slots[id].is_none() {
            self.slots[id] = Some(vec![T::zero(); self.sizes[id]]);
        }
        self.slots[id].as_mut().unwrap()
    }

    pub fn add_slice(&mut self, id: usize, contrib: &[T]) {
        let slot = self.slot(id);
        for (s, &c) in slot.iter_mut().zip(contrib) {
            *s = *s + c;
        }
    }
}

type BackFn<T> = Box<dyn Fn(&[T], &mut Grads<T>)>;

struct Node<T: Scalar> {
    shape: Vec<usize>,
    back: Option<BackFn<T>>,
}

struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

/// Shared handle to one recording of a computation.
pub struct Tape<T: Scalar>(Rc<RefCell<TapeInner<T>>>);

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape(Rc::clone(&self.0))
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape(Rc::new(RefCell::new(TapeInner { nodes: Vec::new(), grads: Vec::new() })))
    }

    pub fn same_tape(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub(crate) fn push(&self, shape: Vec<usize>, back: Option<BackFn<T>>) -> usize {
        let mut inner = self.0.borrow_mut();
        inner.nodes.push(Node { shape, back });
        inner.grads.push(None);
        inner.nodes.len() - 1
    }

    /// Record a leaf (input or parameter); backward stops here and
    /// leaves a gradient of identical shape.
    pub fn leaf(&self, data: Vec<T>, shape: Vec<usize>) -> Tensor<T> {
        assert_eq!(data.len(), numel(&shape), "leaf data/shape mismatch");
        let id = self.push(shape.clone(), None);
        Tensor::tracked(data, shape, self.clone(), id)
    }

    /// Record an interior node produced by an op.
    pub(crate) fn record(&self, data: Vec<T>, shape: Vec<usize>, back: BackFn<T>) -> Tensor<T> {
        let id = self.push(shape.clone(), Some(back));
        Tensor::tracked(data, shape, self.clone(), id)
    }

    /// Reverse sweep from a scalar loss. Existing gradients are cleared.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<(), TensorError> {
        if numel(loss.shape()) != 1 {
            return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
        }
        let Some(loss_id) = loss.node_id_on(self) else {
            // fully detached loss: every gradient is zero
            for g in self.0.borrow_mut().grads.iter_mut() {
                *g = None;
            }
            return Ok(());
        };
        let mut inner = self.0.borrow_mut();
        let sizes: Vec<usize> = inner.nodes.iter().map(|n| numel(&n.shape)).collect();
        for g in inner.grads.iter_mut() {
            *g = None;
        }
        let TapeInner { nodes, grads } = &mut *inner;
        grads[loss_id] = Some(vec![T::one()]);
        for id in (0..=loss_id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(back) = &nodes[id].back {
                let mut sink = Grads { slots: grads, sizes: &sizes };
                back(&g, &mut sink);
            } else {
                // leaf: keep the accumulated gradient
                grads[id] = Some(g);
            }
        }
        Ok(())
    }

    /// Gradient of the most recent backward pass wrt `t`; None for
    /// tensors that received no gradient (detached or unreached).
    pub fn grad(&self, t: &Tensor<T>) -> Option<Vec<T>> {
        let id = t.node_id_on(self)?;
        self.0.borrow().grads[id].clone()
    }

    pub fn num_nodes(&self) -> usize {
        self.0.borrow().nodes.len()
    }
}
