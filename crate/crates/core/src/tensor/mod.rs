//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable value plus an optional record of the
//! operation that produced it. Calling [`Tensor::backward`] on a scalar walks
//! the recorded graph in reverse topological order and accumulates gradients
//! into every leaf created with `requires_grad`. Repeated calls accumulate;
//! use [`Tensor::zero_grad`] to reset a leaf.
//!
//! Reductions always run in ascending flat-index order so that results are
//! bit-reproducible.

pub(crate) mod ops;
pub mod serialize;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use ops::GATHER_ZERO;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Returns whether operations currently record their backward pass.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Disables graph recording until the guard is dropped.
pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    NoGradGuard { prev }
}

pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.prev));
    }
}

/// Vector-Jacobian product of one recorded operation.
///
/// Receives the gradient of the output and the output value and returns one
/// optional gradient per input, in input order.
pub type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct OpRecord {
    name: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Option<OpRecord>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.as_ref().map(|o| o.name))
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Creates a constant tensor. Panics if `data` does not match `shape`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        Self::try_new(shape, data).expect("tensor data does not match shape")
    }

    pub fn try_new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape("new", format!("zero extent in {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// Creates a leaf that collects gradients during [`Tensor::backward`].
    pub fn param(shape: &[usize], data: Vec<f64>) -> Self {
        let t = Self::new(shape, data);
        Self::leaf(t.0.shape.clone(), t.into_data(), true)
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(&[1], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![0.0; numel(shape)])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::new(shape, vec![value; numel(shape)])
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape())
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op: None,
        }))
    }

    /// Builds the result of an operation, recording `backward` when any
    /// input requires gradients and recording is enabled.
    pub fn from_op(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "{name}: output size");
        let track = grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        if !track {
            return Self::leaf(shape, data, false);
        }
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad: true,
            grad: RefCell::new(None),
            op: Some(OpRecord {
                name,
                inputs,
                backward,
            }),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn into_data(self) -> Vec<f64> {
        match Rc::try_unwrap(self.0) {
            Ok(node) => node.data,
            Err(rc) => rc.data.clone(),
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.op.as_ref().map(|o| o.name)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Overwrites the accumulated gradient, e.g. after clipping.
    pub fn set_grad(&self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.numel() {
            return Err(Error::shape("set_grad", format!("{} values for {} elements", grad.len(), self.numel())));
        }
        *self.0.grad.borrow_mut() = Some(grad);
        Ok(())
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), false)
    }

    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Back-propagates from this scalar into every reachable leaf.
    ///
    /// Gradients accumulate into leaves across calls. Fails when the tensor
    /// is not a scalar or when any leaf gradient is not finite.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Err(Error::shape("backward", "loss does not depend on any parameter"));
        }
        let tape = ComputationTape::record(self);
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.0.id, vec![1.0]);
        let mut leaves: Vec<Tensor> = Vec::new();
        for node in tape.nodes.iter().rev() {
            let Some(g) = grads.remove(&node.0.id) else {
                continue;
            };
            let Some(op) = &node.0.op else {
                accumulate_into(&node.0.grad, g);
                leaves.push(node.clone());
                continue;
            };
            let input_grads = (op.backward)(&g, &node.0.data);
            debug_assert_eq!(input_grads.len(), op.inputs.len(), "{}", op.name);
            for (input, ig) in op.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(ig.len(), input.numel(), "{}: grad size", op.name);
                match grads.get_mut(&input.0.id) {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(input.0.id, ig);
                    }
                }
            }
        }
        for leaf in &leaves {
            let grad = leaf.0.grad.borrow();
            if let Some(g) = grad.as_ref() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of leaf with shape {:?}",
                        leaf.shape()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn accumulate_into(slot: &RefCell<Option<Vec<f64>>>, g: Vec<f64>) {
    let mut slot = slot.borrow_mut();
    match slot.as_mut() {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

/// Recorded operations reachable from a root, in topological order
/// (inputs before the operations that consume them).
pub struct ComputationTape {
    nodes: Vec<Tensor>,
}

impl ComputationTape {
    pub fn record(root: &Tensor) -> Self {
        let mut visited: HashMap<u64, ()> = HashMap::new();
        let mut order = Vec::new();
        // Iterative post-order DFS; (node, children_pushed).
        let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if visited.insert(node.0.id, ()).is_some() {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(op) = &node.0.op {
                for input in op.inputs.iter().rev() {
                    if input.requires_grad() && !visited.contains_key(&input.0.id) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        ComputationTape { nodes: order }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operation names in execution order; leaves appear as `"leaf"`.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .map(|n| n.op_name().unwrap_or("leaf"))
            .collect()
    }

    pub fn nodes(&self) -> &[Tensor] {
        &self.nodes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_data() {
        assert!(Tensor::try_new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::try_new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn sum_backward_is_all_ones() {
        let x = Tensor::param(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]);
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn half_squared_norm_grad_is_identity() {
        let vals = vec![0.3, -1.2, 2.5, 4.0];
        let x = Tensor::param(&[4], vals.clone());
        x.mul(&x).unwrap().sum().scale(0.5).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vals);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]);
        let loss = x.sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 3]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]);
        assert!(x.relu().backward().is_err());
    }

    #[test]
    fn tape_visits_shared_nodes_once() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]);
        let y = x.tanh();
        let z = y.add(&y).unwrap().mul(&y).unwrap().sum();
        let tape = ComputationTape::record(&z);
        let ids: Vec<u64> = tape.nodes().iter().map(|n| n.0.id).collect();
        let mut dedup = ids.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(ids.len(), dedup.len());
        assert_eq!(tape.op_names(), vec!["leaf", "tanh", "add", "mul", "sum"]);
        z.backward().unwrap();
        // d/dx sum(2 tanh(x)^2) = 4 tanh(x) (1 - tanh(x)^2)
        let g = x.grad().unwrap();
        for (gi, xi) in g.iter().zip([1.0f64, 2.0]) {
            let t = xi.tanh();
            assert!((gi - 4.0 * t * (1.0 - t * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn no_grad_skips_recording() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]);
        let y = {
            let _g = no_grad();
            x.tanh()
        };
        assert!(!y.requires_grad());
        assert!(x.tanh().requires_grad());
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let x = Tensor::param(&[1], vec![0.0]);
        let bad = Tensor::from_op(
            "bad",
            vec![1],
            vec![0.0],
            vec![x.clone()],
            Box::new(|_, _| vec![Some(vec![f64::NAN])]),
        );
        assert!(matches!(bad.sum().backward(), Err(Error::NonFinite(_))));
    }
}
