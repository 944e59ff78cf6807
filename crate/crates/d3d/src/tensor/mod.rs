//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable row-major arrays. Ops record themselves into a
//! differentiation graph whenever gradients are enabled and at least one
//! operand participates; [`backward`](graph::backward) then yields exact
//! reverse-mode gradients. Backward itself may run with recording enabled
//! (`create_graph`), which is what powers the R1 gradient penalty's
//! second-order path.

pub mod adam;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod ops;
pub mod svd3;

use crate::num::Elem;
use graph::NodeHandle;
use std::sync::Arc;

/// Dense n-dimensional array of `T`, optionally attached to a
/// differentiation graph.
#[derive(Clone)]
pub struct Tensor<T: Elem> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    pub(crate) node: Option<NodeHandle<T>>,
}

impl<T: Elem> Tensor<T> {
    /// Constant tensor from raw data. Panics if the element count does not
    /// match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            numel,
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor::from_vec(&[1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::from_vec(shape, vec![T::zero(); shape.iter().product()])
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor::from_vec(shape, vec![v; shape.iter().product()])
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Self {
        Tensor::from_vec(
            shape,
            data.iter().map(|&x| crate::num::c(x)).collect::<Vec<T>>(),
        )
    }

    /// Mark this tensor as a differentiable leaf (fresh graph node).
    pub fn tracked(mut self) -> Self {
        self.node = Some(graph::leaf_node());
        self
    }

    /// Same values, no graph participation.
    pub fn detach(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Unique id of the underlying graph node, if any. Leaf ids key
    /// gradient maps.
    pub fn node_id(&self) -> Option<u64> {
        self.node.as_ref().map(|h| h.id())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        self.data.clone()
    }

    /// Scalar value; panics unless numel == 1.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor {:?}", self.shape);
        self.data[0]
    }

    pub fn item_f64(&self) -> f64 {
        self.item().as_f64()
    }

    /// Value at a multi-index.
    pub fn at(&self, idx: &[usize]) -> T {
        assert_eq!(idx.len(), self.shape.len());
        let mut flat = 0usize;
        for (d, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[d]);
            flat = flat * self.shape[d] + i;
        }
        self.data[flat]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Replace the payload with same-shape data, keeping no graph node.
    pub fn with_data(&self, data: Vec<T>) -> Self {
        Tensor::from_vec(&self.shape, data)
    }
}

impl<T: Elem> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<&T> = self.data.iter().take(8).collect();
        write!(
            f,
            "Tensor{:?}{}{:?}{}",
            self.shape,
            if self.is_tracked() { "*" } else { "" },
            preview,
            if self.numel() > 8 { ", .." } else { "" }
        )
    }
}

/// Bitwise equality of shape and payload (test helper).
pub fn bit_identical<T: Elem>(a: &Tensor<T>, b: &Tensor<T>) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data().iter())
            .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
}
