//! Dense row-major tensors, optionally tracked on a tape.

use std::rc::Rc;

use crate::scalar::Scalar;
use crate::shape::numel;
use crate::tape::Tape;

pub struct Tensor<T: Scalar> {
    data: Rc<Vec<T>>,
    shape: Vec<usize>,
    node: Option<(Tape<T>, usize)>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            data: Rc::clone(&self.data),
            shape: self.shape.clone(),
            node: self.node.as_ref().map(|(t, id)| (t.clone(), *id)),
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// Untracked tensor (a constant as far as autodiff is concerned).
    pub fn from_vec(data: Vec<T>, shape: Vec<usize>) -> Self {
        assert_eq!(data.len(), numel(&shape), "data/shape mismatch");
        Tensor { data: Rc::new(data), shape, node: None }
    }

    pub fn scalar(v: T) -> Self {
        Tensor::from_vec(vec![v], vec![])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::from_vec(vec![T::zero(); numel(shape)], shape.to_vec())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor::from_vec(vec![v; numel(shape)], shape.to_vec())
    }

    pub(crate) fn tracked(data: Vec<T>, shape: Vec<usize>, tape: Tape<T>, id: usize) -> Self {
        Tensor { data: Rc::new(data), shape, node: Some((tape, id)) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn tape(&self) -> Option<&Tape<T>> {
        self.node.as_ref().map(|(t, _)| t)
    }

    pub fn node_id_on(&self, tape: &Tape<T>) -> Option<usize> {
        match &self.node {
            Some((t, id)) if t.same_tape(tape) => Some(*id),
            _ => None,
        }
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    /// Stop-gradient: same values, no grad-node. Backward never reaches
    /// the ancestors of `self` through the returned tensor.
    pub fn detach(&self) -> Self {
        Tensor { data: Rc::clone(&self.data), shape: self.shape.clone(), node: None }
    }

    /// Cast element type (always untracked).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_vec(
            self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
            self.shape.clone(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.numel() <= 8 {
            write!(f, " {:?}", &self.data[..])?;
        }
        Ok(())
    }
}

/// Tape shared by the tracked operands, if any.
pub(crate) fn tape_of<T: Scalar>(operands: &[&Tensor<T>]) -> Option<Tape<T>> {
    let mut found: Option<Tape<T>> = None;
    for t in operands {
        if let Some(tape) = t.tape() {
            match &found {
                None => found = Some(tape.clone()),
                Some(f) => assert!(f.same_tape(tape), "operands recorded on different tapes"),
            }
        }
    }
    found
}
