//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! A [`Tape`] records one forward computation as a list of nodes. Each node
//! owns its forward value and, per parent, a closure mapping the upstream
//! gradient to that parent's gradient contribution. [`Tape::backward`] walks
//! nodes in reverse creation order, which is a valid topological order
//! because an op can only consume already-created nodes.
//!
//! [`Var`] is a `Copy` handle (tape reference + node id); expression code
//! passes it by value. Tapes are single-threaded by construction
//! (`RefCell`) and are meant to live for exactly one forward/backward pass.

use crate::array::Array;
use crate::params::{ParamId, ParamSet};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

/// Maps the gradient flowing into a node to the contribution for one parent.
pub(crate) type VjpFn = Box<dyn Fn(&Array) -> Array>;

pub(crate) struct Node {
    value: Rc<Array>,
    parents: Vec<(usize, VjpFn)>,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    // One leaf node per parameter, so gradient accumulation across all uses
    // of a parameter happens at a single node.
    param_leaves: RefCell<HashMap<ParamId, usize>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Rc<Array>, parents: Vec<(usize, VjpFn)>, param: Option<ParamId>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            param,
        });
        nodes.len() - 1
    }

    /// Leaf with no gradient flow.
    pub fn constant(&self, value: Array) -> Var<'_> {
        let id = self.push(Rc::new(value), Vec::new(), None);
        Var { tape: self, id }
    }

    /// Leaf tied to a parameter; repeated calls for the same id return the
    /// same node.
    pub fn param<'t>(&'t self, params: &ParamSet, id: ParamId) -> Var<'t> {
        if let Some(&node) = self.param_leaves.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let node = self.push(Rc::new(params.value(id).clone()), Vec::new(), Some(id));
        self.param_leaves.borrow_mut().insert(id, node);
        Var { tape: self, id: node }
    }

    pub(crate) fn record<'t>(
        &'t self,
        value: Array,
        parents: Vec<(usize, VjpFn)>,
    ) -> Var<'t> {
        let id = self.push(Rc::new(value), parents, None);
        Var { tape: self, id }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Array> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse pass from a scalar root. Returns per-parameter gradients.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        assert!(std::ptr::eq(root.tape, self), "root from a different tape");
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.id].value.numel(),
            1,
            "backward needs a scalar root, got shape {}",
            nodes[root.id].value.shape()
        );

        let mut grads: Vec<Option<Array>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Array::scalar(1.0));

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            for (parent, vjp) in &node.parents {
                let contrib = vjp(&g);
                match &mut grads[*parent] {
                    Some(acc) => acc.add_in_place(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            if node.param.is_some() {
                grads[id] = Some(g);
            }
        }

        let mut by_param = HashMap::new();
        for (&pid, &node) in self.param_leaves.borrow().iter() {
            if let Some(g) = grads[node].take() {
                by_param.insert(pid, g);
            }
        }
        Gradients { by_param }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub(crate) fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Array> {
        self.tape.value_of(self.id)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.value().dims().to_vec()
    }

    pub(crate) fn same_tape(&self, other: &Var<'_>) -> bool {
        std::ptr::eq(self.tape, other.tape)
    }
}

/// Result of a backward pass: gradient per parameter that participated.
pub struct Gradients {
    by_param: HashMap<ParamId, Array>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.by_param.get(&id)
    }

    /// Add every gradient into the parameter set's accumulators.
    pub fn accumulate_into(&self, params: &mut ParamSet) {
        let mut ids: Vec<ParamId> = self.by_param.keys().copied().collect();
        ids.sort();
        for id in ids {
            params.accumulate_grad(id, &self.by_param[&id]);
        }
    }

    /// Gradient for `id`, zeros if the parameter never entered the graph.
    pub fn wrt(&self, params: &ParamSet, id: ParamId) -> Array {
        match self.by_param.get(&id) {
            Some(g) => g.clone(),
            None => Array::zeros(params.value(id).dims()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.by_param.values().all(|g| g.is_finite())
    }

    pub fn touched(&self) -> usize {
        self.by_param.len()
    }
}
