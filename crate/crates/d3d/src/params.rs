//! Named parameter collections and gradient maps.

use crate::num::Elem;
use crate::tensor::graph::Grads;
use crate::tensor::Tensor;
use std::collections::BTreeMap;

/// Gradients by parameter name, shapes matching the parameters.
pub type GradMap<T> = BTreeMap<String, Tensor<T>>;

/// Ordered, named set of trainable tensors. Every tensor in the set is a
/// tracked leaf; iteration order is the sorted name order, which fixes
/// reduction and serialization order.
#[derive(Clone, Default)]
pub struct ParamSet<T: Elem> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Elem> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        debug_assert!(!self.map.contains_key(&name), "duplicate parameter {name}");
        self.map.insert(name, t.tracked());
    }

    /// Insert a tensor as-is, preserving any existing graph node. Used when
    /// threading externally tracked tensors through a forward pass.
    pub fn insert_raw(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.map.insert(name.into(), t);
    }

    /// Replace a parameter's value (fresh leaf).
    pub fn set(&mut self, name: &str, t: Tensor<T>) {
        let prev = self
            .map
            .insert(name.to_string(), t.tracked())
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        let new = &self.map[name];
        assert_eq!(prev.shape(), new.shape(), "shape change for {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn numel(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    /// Extract this set's gradients from a backward pass. Parameters the
    /// loss never reached are absent from the result.
    pub fn grads(&self, grads: &Grads<T>) -> GradMap<T> {
        self.map
            .iter()
            .filter_map(|(name, p)| grads.get(p).map(|g| (name.clone(), g.detach())))
            .collect()
    }

    /// Re-leaf every parameter (fresh graph nodes). Used when reusing one
    /// parameter set across independent graphs.
    pub fn refresh(&mut self) {
        for t in self.map.values_mut() {
            *t = t.detach().tracked();
        }
    }

    pub fn cast<U: Elem>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for (name, t) in &self.map {
            out.insert(
                name.clone(),
                Tensor::from_vec(
                    t.shape(),
                    t.data().iter().map(|x| crate::num::c(x.as_f64())).collect(),
                ),
            );
        }
        out
    }

    /// True when both sets have identical names, shapes, and bit patterns.
    pub fn bit_identical(&self, other: &ParamSet<T>) -> bool {
        self.len() == other.len()
            && self.iter().zip(other.iter()).all(|((na, ta), (nb, tb))| {
                na == nb && crate::tensor::bit_identical(ta, tb)
            })
    }
}

impl<T: Elem> std::fmt::Debug for ParamSet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ParamSet({} tensors, {} scalars)", self.len(), self.numel())
    }
}
