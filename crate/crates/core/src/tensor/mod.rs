//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tensor`] is a reference-counted node in a dynamically built graph.
//! Every differentiable operation records its parents and a closure mapping
//! the output gradient to per-parent gradients; [`Tensor::backward`] walks the
//! graph in reverse topological order and accumulates into the leaves.
//!
//! Graphs are confined to one thread (`Rc`), while the heavy kernels
//! (convolution) parallelise internally over the batch with a fixed reduction
//! order so results are identical for any thread count.

mod adam;
mod conv;
pub mod gradcheck;
mod ops;

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

pub use adam::{Adam, AdamConfig, AdamState};
pub use conv::{conv2d, partial_conv2d, partial_conv_ratio, PartialConvOutput, PartialConvRatio};

use crate::error::{ensure, Error, Result};

pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    data: RefCell<Vec<f64>>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data[..8]", &preview)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Build a constant tensor; fails on a length mismatch or non-finite data.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        ensure!(
            numel_of(shape) == data.len(),
            "shape {:?} holds {} elements, got {}",
            shape,
            numel_of(shape),
            data.len()
        );
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite value {} at flat index {i}", data[i])));
        }
        Ok(Self::raw(data, shape.to_vec()))
    }

    /// Trainable leaf.
    pub fn parameter(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(t.into_leaf(true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::raw(vec![0.0; numel_of(shape)], shape.to_vec())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::raw(vec![value; numel_of(shape)], shape.to_vec())
    }

    pub fn scalar(value: f64) -> Self {
        Self::raw(vec![value], Vec::new())
    }

    pub(crate) fn raw(data: Vec<f64>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Rc::new(Node {
            data: RefCell::new(data),
            shape,
            requires_grad: false,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Result node of an operation. The graph edge is only kept when some
    /// parent participates in differentiation.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, parents: Vec<Tensor>, backward: BackwardFn) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let (parents, backward) = if requires_grad { (parents, Some(backward)) } else { (Vec::new(), None) };
        Tensor(Rc::new(Node {
            data: RefCell::new(data),
            shape,
            requires_grad,
            grad: RefCell::new(None),
            parents,
            backward,
        }))
    }

    fn into_leaf(self, requires_grad: bool) -> Self {
        let data = self.0.data.borrow().clone();
        Tensor(Rc::new(Node {
            data: RefCell::new(data),
            shape: self.0.shape.clone(),
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Copy of this tensor cut from the graph.
    pub fn detach(&self) -> Self {
        self.clone().into_leaf(false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let data = self.0.data.borrow();
        assert_eq!(data.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Overwrite the values of a leaf in place (optimizer updates, checkpoint
    /// restore). Graphs built earlier keep reading the new values, so callers
    /// only do this between iterations.
    pub fn assign(&self, values: &[f64]) -> Result<()> {
        ensure!(self.0.backward.is_none(), "assign() is only defined for leaf tensors");
        let mut data = self.0.data.borrow_mut();
        ensure!(data.len() == values.len(), "assign() length {} into tensor of {} elements", values.len(), data.len());
        data.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.0.data.borrow_mut());
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.borrow().iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::numeric(format!("{what} contains NaN or Inf")))
        }
    }

    /// Accumulate d(self)/d(leaf) into every trainable leaf reachable from
    /// this scalar. Gradients add up across calls until [`zero_grad`].
    ///
    /// [`zero_grad`]: Tensor::zero_grad
    pub fn backward(&self) -> Result<()> {
        ensure!(self.numel() == 1, "backward() needs a scalar loss, got shape {:?}", self.shape());
        self.ensure_finite("loss")?;
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topological_order();
        let mut pending: HashMap<*const Node, Vec<f64>> = HashMap::new();
        pending.insert(Rc::as_ptr(&self.0), vec![1.0]);

        for node in order.iter().rev() {
            let Some(out_grad) = pending.remove(&Rc::as_ptr(&node.0)) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&out_grad).for_each(|(a, g)| *a += g),
                        None => *slot = Some(out_grad),
                    }
                }
                Some(backward) => {
                    let parent_grads = backward(&out_grad);
                    debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                    for (parent, grad) in node.0.parents.iter().zip(parent_grads) {
                        let Some(grad) = grad else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(grad.len(), parent.numel());
                        pending
                            .entry(Rc::as_ptr(&parent.0))
                            .and_modify(|acc| acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g))
                            .or_insert(grad);
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the differentiable subgraph (parents before children).
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(Rc::as_ptr(&t.0)) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.0.parents {
                if p.requires_grad() && !visited.contains(&Rc::as_ptr(&p.0)) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length_and_nan() {
        assert!(matches!(Tensor::new(vec![1.0, 2.0], &[3]), Err(Error::Contract(_))));
        assert!(matches!(Tensor::new(vec![1.0, f64::NAN], &[2]), Err(Error::Numeric(_))));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::parameter(vec![0.5, -1.0, 2.0, 3.0, 4.0, 5.0], &[2, 3]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let x = Tensor::parameter(vec![2.0, 3.0], &[2]).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::parameter(vec![1.0, 1.0], &[2]).unwrap();
        x.scale(3.0).sum().backward().unwrap();
        x.scale(3.0).sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0, 6.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::parameter(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(x.scale(2.0).backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_subexpression_gets_both_paths() {
        // y = x*x + x  ->  dy/dx = 2x + 1
        let x = Tensor::parameter(vec![3.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn constants_do_not_build_graphs() {
        let a = Tensor::ones(&[4]);
        let b = a.scale(2.0);
        assert!(!b.requires_grad());
        assert!(b.0.parents.is_empty());
    }
}
