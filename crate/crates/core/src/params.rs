//! Named parameter storage. Insertion order is the canonical order for
//! checkpoints and optimizer state, so it must not depend on hash maps.

use crate::array::Array;
use std::collections::HashMap;

/// Stable handle to one parameter inside a [`ParamSet`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

pub struct Parameter {
    pub name: String,
    pub value: Array,
    /// Explicit gradient accumulator; zeroed only by [`ParamSet::reset_grads`].
    pub grad: Array,
    pub trainable: bool,
}

/// Ordered collection of named tensors.
///
/// `version` increments on every mutation of any value; caches keyed on it
/// (e.g. precomputed probe features) know when to refresh.
#[derive(Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
    version: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        self.insert(name.into(), value, true)
    }

    /// Present in checkpoints but ignored by the optimizer.
    pub fn add_frozen(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Array, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        let grad = Array::zeros(value.dims());
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable,
        });
        self.version += 1;
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        self.version += 1;
        &mut self.params[id.0].value
    }

    /// Replace a value without changing shape.
    pub fn set_value(&mut self, id: ParamId, value: Array) {
        assert_eq!(
            self.params[id.0].value.shape(),
            value.shape(),
            "set_value changes shape of {:?}",
            self.params[id.0].name
        );
        self.params[id.0].value = value;
        self.version += 1;
    }

    pub fn grad(&self, id: ParamId) -> &Array {
        &self.params[id.0].grad
    }

    /// Add into the gradient accumulator (does not touch `version`).
    pub fn accumulate_grad(&mut self, id: ParamId, delta: &Array) {
        self.params[id.0].grad.add_in_place(delta);
    }

    pub fn reset_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.is_trainable(id)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}
