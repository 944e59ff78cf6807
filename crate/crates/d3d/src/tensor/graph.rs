//! Differentiation graph: node bookkeeping, gradient mode, and backward.

use super::Tensor;
use crate::error::D3dError;
use crate::num::Elem;
use std::cell::Cell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

static NEXT_NODE_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// RAII guard disabling op recording on this thread.
pub struct NoGradGuard {
    prev: bool,
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

pub(crate) fn with_grad_enabled() -> GradOnGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(true));
    GradOnGuard { prev }
}

pub(crate) struct GradOnGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

impl Drop for GradOnGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Vector-Jacobian product: given per-output-slot upstream gradients (None
/// where no gradient flows) and a mask of which inputs need gradients,
/// return per-input gradients.
pub(crate) type VjpFn<T> =
    Box<dyn Fn(&[Option<Tensor<T>>], &[bool]) -> Vec<Option<Tensor<T>>> + Send + Sync>;

pub(crate) enum NodeKind<T: Elem> {
    Leaf,
    Op(VjpFn<T>),
}

pub(crate) struct Node<T: Elem> {
    id: u64,
    inputs: Vec<Option<NodeHandle<T>>>,
    n_slots: usize,
    kind: NodeKind<T>,
}

/// Reference to one output slot of a node.
#[derive(Clone)]
pub(crate) struct NodeHandle<T: Elem> {
    node: Arc<Node<T>>,
    slot: usize,
}

impl<T: Elem> NodeHandle<T> {
    pub(crate) fn id(&self) -> u64 {
        self.node.id
    }
}

pub(crate) fn leaf_node<T: Elem>() -> NodeHandle<T> {
    NodeHandle {
        node: Arc::new(Node {
            id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
            inputs: Vec::new(),
            n_slots: 1,
            kind: NodeKind::Leaf,
        }),
        slot: 0,
    }
}

/// Build op outputs, recording a graph node when gradient mode is on and
/// any input participates in a graph.
pub(crate) fn op_outputs<T: Elem>(
    inputs: &[&Tensor<T>],
    outputs: Vec<(Vec<usize>, Vec<T>)>,
    vjp: VjpFn<T>,
) -> Vec<Tensor<T>> {
    let record = grad_enabled() && inputs.iter().any(|t| t.node.is_some());
    let n_slots = outputs.len();
    let node = if record {
        Some(Arc::new(Node {
            id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
            inputs: inputs.iter().map(|t| t.node.clone()).collect(),
            n_slots,
            kind: NodeKind::Op(vjp),
        }))
    } else {
        None
    };
    outputs
        .into_iter()
        .enumerate()
        .map(|(slot, (shape, data))| {
            let mut t = Tensor::from_vec(&shape, data);
            if let Some(n) = &node {
                t.node = Some(NodeHandle {
                    node: n.clone(),
                    slot,
                });
            }
            t
        })
        .collect()
}

pub(crate) fn op1<T: Elem>(
    inputs: &[&Tensor<T>],
    shape: Vec<usize>,
    data: Vec<T>,
    vjp: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + Send + Sync + 'static,
) -> Tensor<T> {
    let wrapped: VjpFn<T> = Box::new(move |gouts, needs| match &gouts[0] {
        Some(g) => vjp(g, needs),
        None => vec![None; needs.len()],
    });
    op_outputs(inputs, vec![(shape, data)], wrapped)
        .pop()
        .expect("single output")
}

/// Gradients produced by one backward pass, keyed by leaf node id.
pub struct Grads<T: Elem> {
    by_leaf: HashMap<u64, Tensor<T>>,
    /// True when the loss was detached from any graph.
    pub detached: bool,
}

impl<T: Elem> Grads<T> {
    pub fn get(&self, leaf: &Tensor<T>) -> Option<&Tensor<T>> {
        leaf.node_id().and_then(|id| self.by_leaf.get(&id))
    }

    pub fn by_id(&self, id: u64) -> Option<&Tensor<T>> {
        self.by_leaf.get(&id)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

/// Reverse-mode gradients of a scalar loss with respect to every reachable
/// leaf. `create_graph` records the backward computation itself, enabling
/// gradients of gradients (used by the R1 penalty).
pub fn backward<T: Elem>(loss: &Tensor<T>, create_graph: bool) -> Result<Grads<T>, D3dError> {
    if loss.numel() != 1 {
        return Err(D3dError::Autodiff(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let root = match &loss.node {
        Some(h) => h.clone(),
        None => {
            return Ok(Grads {
                by_leaf: HashMap::new(),
                detached: true,
            })
        }
    };

    // Post-order DFS (iterative) for a topological order.
    let mut order: Vec<Arc<Node<T>>> = Vec::new();
    let mut visited: HashMap<u64, ()> = HashMap::new();
    let mut stack: Vec<(Arc<Node<T>>, usize)> = vec![(root.node.clone(), 0)];
    visited.insert(root.node.id, ());
    while let Some((node, child_idx)) = stack.last_mut() {
        let mut pushed = false;
        while *child_idx < node.inputs.len() {
            let i = *child_idx;
            *child_idx += 1;
            if let Some(h) = &node.inputs[i] {
                if !visited.contains_key(&h.node.id) {
                    visited.insert(h.node.id, ());
                    let child = h.node.clone();
                    stack.push((child, 0));
                    pushed = true;
                    break;
                }
            }
        }
        if !pushed {
            let (node, _) = stack.pop().expect("stack non-empty");
            order.push(node);
        }
    }

    // Per-node, per-slot accumulated output gradients.
    let mut slot_grads: HashMap<u64, Vec<Option<Tensor<T>>>> = HashMap::new();
    slot_grads.insert(root.node.id, {
        let mut v: Vec<Option<Tensor<T>>> = vec![None; root.node.n_slots];
        v[root.slot] = Some(Tensor::ones(loss.shape()));
        v
    });

    let mut by_leaf: HashMap<u64, Tensor<T>> = HashMap::new();

    // VJPs run without recording unless a higher-order graph is requested.
    let guard_off = if create_graph { None } else { Some(no_grad()) };
    let guard_on = if create_graph {
        Some(with_grad_enabled())
    } else {
        None
    };

    for node in order.iter().rev() {
        let Some(gouts) = slot_grads.remove(&node.id) else {
            continue;
        };
        if gouts.iter().all(|g| g.is_none()) {
            continue;
        }
        match &node.kind {
            NodeKind::Leaf => {
                if let Some(g) = gouts.into_iter().next().flatten() {
                    by_leaf.insert(node.id, g);
                }
            }
            NodeKind::Op(vjp) => {
                let needs: Vec<bool> = node.inputs.iter().map(|i| i.is_some()).collect();
                let gins = vjp(&gouts, &needs);
                debug_assert_eq!(gins.len(), node.inputs.len());
                for (inp, gin) in node.inputs.iter().zip(gins) {
                    let (Some(handle), Some(g)) = (inp, gin) else {
                        continue;
                    };
                    let entry = slot_grads
                        .entry(handle.node.id)
                        .or_insert_with(|| vec![None; handle.node.n_slots]);
                    entry[handle.slot] = Some(match entry[handle.slot].take() {
                        Some(prev) => prev.add(&g),
                        None => g,
                    });
                }
            }
        }
    }

    drop(guard_on);
    drop(guard_off);

    Ok(Grads {
        by_leaf,
        detached: false,
    })
}
