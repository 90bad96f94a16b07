//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Every operation records, on an implicit per-thread tape, the closure that
//! propagates adjoints to its inputs. Tensor creation order doubles as tape
//! position, so [`backward`] replays closures in exact reverse execution
//! order. The graph is consumed per training step: once the loss and its
//! intermediates drop, the step's tape is gone.
//!
//! A tensor graph is a single-threaded unit of work (`Tensor` is `!Send`).
//! Heavy kernels parallelize internally over disjoint output regions with a
//! fixed per-element summation order, so results are bit-identical regardless
//! of thread count.

mod adam;
mod conv;
mod ops;
mod sample;
mod scalar;
mod stats;

pub use adam::{adam_update, Adam, AdamParams};
pub use conv::{avg_pool2, conv2d, conv_transpose2d, max_pool2};
pub use sample::{bilinear_upsample, grid_sample, resize_bilinear_raw};
pub use scalar::{Dtype, Scalar};
pub use stats::{add_stat, div_stat, instance_stats, mul_stat, sub_stat, INSTANCE_STATS_EPS};

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
    static NO_GRAD_DEPTH: Cell<u32> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

fn grad_enabled() -> bool {
    NO_GRAD_DEPTH.with(|c| c.get() == 0)
}

/// Runs `f` with gradient recording disabled; ops executed inside produce
/// constant tensors with no parents, so no graph memory accumulates.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    NO_GRAD_DEPTH.with(|c| c.set(c.get() + 1));
    let out = f();
    NO_GRAD_DEPTH.with(|c| c.set(c.get() - 1));
    out
}

pub(crate) type BackFn<S> = Box<dyn Fn(&[S], &mut Gradients<S>)>;

struct Inner<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    grad: RefCell<Option<Vec<S>>>,
    requires_grad: bool,
    /// True when a gradient path to some requires_grad leaf exists.
    track: bool,
    parents: Vec<Tensor<S>>,
    backward_fn: Option<BackFn<S>>,
}

/// Dense N-dimensional array, optionally participating in the gradient tape.
pub struct Tensor<S: Scalar> {
    inner: Rc<Inner<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.inner.shape, self.inner.requires_grad
        )
    }
}

impl<S: Scalar> Tensor<S> {
    fn new_inner(
        shape: Vec<usize>,
        data: Vec<S>,
        requires_grad: bool,
        parents: Vec<Tensor<S>>,
        backward_fn: Option<BackFn<S>>,
    ) -> Self {
        let track = requires_grad || parents.iter().any(|p| p.inner.track);
        let (parents, backward_fn) = if track && grad_enabled() {
            (parents, backward_fn)
        } else {
            (Vec::new(), None)
        };
        let track = track && grad_enabled();
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                track,
                parents,
                backward_fn,
            }),
        }
    }

    /// Constant tensor from a flat row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel == 0 {
            return Err(Error::arg("from_vec", format!("empty shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {shape:?} implies {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self::new_inner(shape.to_vec(), data, false, Vec::new(), None))
    }

    /// Trainable leaf; gradients accumulate here during [`backward`].
    pub fn param(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel == 0 || numel != data.len() {
            return Err(Error::shape(
                "param",
                format!("shape {shape:?} incompatible with {} values", data.len()),
            ));
        }
        Ok(Self::new_inner(shape.to_vec(), data, true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Self::from_vec(shape, vec![S::ZERO; numel])
    }

    pub fn full(shape: &[usize], value: S) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Self::from_vec(shape, vec![value; numel])
    }

    pub fn scalar(value: S) -> Self {
        Self::from_vec(&[1], vec![value]).expect("scalar shape is valid")
    }

    /// Constant map of `value`, shaped `[1, H, W]` (a spatially expanded
    /// time-stamp channel).
    pub fn fill_map(value: S, h: usize, w: usize) -> Self {
        Self::from_vec(&[1, h, w], vec![value; h * w]).expect("fill_map shape is valid")
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub(crate) fn is_tracked(&self) -> bool {
        self.inner.track
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> std::cell::Ref<'_, Vec<S>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Overwrites the tensor's values in place (parameter updates, FD probes).
    pub fn set_data(&self, values: &[S]) {
        let mut data = self.inner.data.borrow_mut();
        assert_eq!(data.len(), values.len(), "set_data length mismatch");
        data.copy_from_slice(values);
    }

    pub(crate) fn with_data_mut<R>(&self, f: impl FnOnce(&mut [S]) -> R) -> R {
        f(&mut self.inner.data.borrow_mut())
    }

    /// Copy of the values, severed from the tape.
    pub fn detach(&self) -> Self {
        Self::new_inner(
            self.inner.shape.clone(),
            self.inner.data.borrow().clone(),
            false,
            Vec::new(),
            None,
        )
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<S>,
        parents: Vec<Tensor<S>>,
        backward_fn: BackFn<S>,
    ) -> Self {
        Self::new_inner(shape, data, false, parents, Some(backward_fn))
    }

    fn accumulate_grad(&self, g: &[S]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(g) {
                    *e += *v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }
}

/// Per-backward adjoint store, keyed by tape position.
pub struct Gradients<S: Scalar> {
    map: HashMap<u64, Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    fn new() -> Self {
        Gradients {
            map: HashMap::new(),
        }
    }

    fn take(&mut self, id: u64) -> Option<Vec<S>> {
        self.map.remove(&id)
    }

    /// Adds `contribution(slot)` into the adjoint buffer of `target`.
    /// No-op when the target has no gradient path to a leaf.
    pub(crate) fn accumulate_with(&mut self, target: &Tensor<S>, f: impl FnOnce(&mut [S])) {
        if !target.inner.track {
            return;
        }
        let slot = self
            .map
            .entry(target.inner.id)
            .or_insert_with(|| vec![S::ZERO; target.numel()]);
        f(slot);
    }

    pub(crate) fn accumulate(&mut self, target: &Tensor<S>, contribution: &[S]) {
        self.accumulate_with(target, |slot| {
            for (s, c) in slot.iter_mut().zip(contribution) {
                *s += *c;
            }
        });
    }
}

/// Reverse pass from a scalar loss.
///
/// Visits reachable nodes in strict reverse execution order, exactly once
/// each, and populates `grad` on every reachable `requires_grad` leaf
/// (zeros if no adjoint flowed there). Grad buffers accumulate across calls
/// until [`Tensor::zero_grad`].
pub fn backward<S: Scalar>(loss: &Tensor<S>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::arg(
            "backward",
            format!("loss must be scalar, got shape {:?}", loss.shape()),
        ));
    }
    if !loss.inner.track {
        return Err(Error::arg(
            "backward",
            "loss has no gradient path to any requires_grad leaf",
        ));
    }

    // Reachable tracked subgraph.
    let mut nodes: Vec<Tensor<S>> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack = vec![loss.clone()];
    while let Some(node) = stack.pop() {
        if !node.inner.track || !seen.insert(node.inner.id) {
            continue;
        }
        for p in &node.inner.parents {
            stack.push(p.clone());
        }
        nodes.push(node);
    }
    // Creation ids are tape positions; descending id = reverse execution order.
    nodes.sort_by_key(|n| std::cmp::Reverse(n.inner.id));

    let mut grads = Gradients::new();
    grads.map.insert(loss.inner.id, vec![S::ONE]);

    for node in &nodes {
        let g = match grads.take(node.inner.id) {
            Some(g) => g,
            None => {
                // Reachable but received no adjoint (e.g. non-argmax branch
                // of max_of). Leaves still get a populated zero grad.
                if node.inner.requires_grad {
                    node.accumulate_grad(&vec![S::ZERO; node.numel()]);
                }
                continue;
            }
        };
        if node.inner.requires_grad {
            node.accumulate_grad(&g);
        }
        if let Some(back) = &node.inner.backward_fn {
            back(&g, &mut grads);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_shape() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::from_vec(&[], vec![]).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let p = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = p.scale(2.0);
        assert!(backward(&y).is_err());
    }

    #[test]
    fn grad_accumulates_until_zeroed() {
        let p = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        for _ in 0..2 {
            let loss = p.mul(&p).unwrap().mean_all();
            backward(&loss).unwrap();
        }
        // d/dp mean(p^2) = 2p/2 = p, accumulated twice.
        assert_eq!(p.grad().unwrap(), vec![2.0, 4.0]);
        p.zero_grad();
        assert!(p.grad().is_none());
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let p = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| p.mul(&p).unwrap().mean_all());
        assert!(!y.is_tracked());
    }

    #[test]
    fn reachable_leaf_without_flow_gets_zero_grad() {
        let a = Tensor::<f64>::param(&[1], vec![3.0]).unwrap();
        let b = Tensor::<f64>::param(&[1], vec![1.0]).unwrap();
        let m = Tensor::max_of(&[a.clone(), b.clone()]).unwrap();
        backward(&m).unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0]);
        assert_eq!(b.grad().unwrap(), vec![0.0]);
    }
}
