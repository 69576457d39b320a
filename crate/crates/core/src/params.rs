//! Named parameter store shared by the translator and the semantic network.

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Tensor};
use indexmap::IndexMap;
use rand::Rng;

/// Ordered map of parameter name to tensor. Insertion order is the
/// serialization order, so identically-seeded builds produce identical
/// checkpoints.
#[derive(Debug, Clone, Default)]
pub struct Parameters {
    entries: IndexMap<String, Tensor>,
}

/// Leaf bindings of one parameter store into one graph. Both forward paths of
/// a training step share the same binding, so they read the very same leaf
/// nodes.
#[derive(Debug, Clone)]
pub struct Bound {
    ids: IndexMap<String, NodeId>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(
            self.entries.insert(name.clone(), tensor.with_grad()).is_none(),
            "duplicate parameter name {name}"
        );
    }

    /// Register a parameter initialized uniformly in the Xavier/Glorot range
    /// for the given fan-in/fan-out.
    pub fn insert_xavier(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.insert(name, Tensor::uniform(shape, bound, rng));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> &Tensor {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.entries.iter_mut() {
            t.zero_grad();
        }
    }

    pub fn scale_grads(&mut self, c: f64) {
        for (_, t) in self.entries.iter_mut() {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|v| *v *= c);
            }
        }
    }

    /// Insert every parameter as a leaf of `graph`, returning the binding.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        let ids = self
            .entries
            .iter()
            .map(|(name, t)| (name.clone(), graph.leaf(t.clone())))
            .collect();
        Bound { ids }
    }

    /// Bind every parameter, routing `name` to an existing leaf instead of
    /// inserting a fresh copy. Gradient checks differentiate through that
    /// single substituted leaf.
    pub fn bind_substituting(&self, graph: &mut Graph, name: &str, leaf: NodeId) -> Bound {
        let ids = self
            .entries
            .iter()
            .map(|(n, t)| {
                if n == name {
                    (n.clone(), leaf)
                } else {
                    (n.clone(), graph.leaf(t.clone()))
                }
            })
            .collect();
        Bound { ids }
    }

    /// Pull gradients accumulated in `graph` back into this store, summing
    /// over any prior content.
    pub fn absorb_grads(&mut self, graph: &Graph, bound: &Bound) {
        for (name, id) in &bound.ids {
            if let Some(g) = graph.grad(*id) {
                self.entries
                    .get_mut(name)
                    .expect("bound parameter exists")
                    .accumulate_grad(g);
            }
        }
    }

    /// Overwrite values from another store (used when loading checkpoints).
    pub fn load_values(&mut self, other: &Parameters) -> Result<()> {
        for (name, t) in self.entries.iter_mut() {
            let src = other.entries.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("missing parameter `{name}` in checkpoint"))
            })?;
            if src.shape != t.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` shape {:?} does not match model shape {:?}",
                    src.shape, t.shape
                )));
            }
            t.data = src.data.clone();
        }
        Ok(())
    }
}

/// Hand-assembled binding, for callers that need to route one parameter to a
/// specific pre-existing leaf (gradient checks, substitution experiments).
#[derive(Debug, Default)]
pub struct BoundBuilder {
    ids: IndexMap<String, NodeId>,
}

impl BoundBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, id: NodeId) {
        self.ids.insert(name, id);
    }

    pub fn finish(self) -> Bound {
        Bound { ids: self.ids }
    }
}

impl Bound {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn ids(&self) -> &IndexMap<String, NodeId> {
        &self.ids
    }
}
