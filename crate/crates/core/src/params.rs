//! Named parameter storage shared by the alignment module and the backbone.

use crate::autograd::{Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(self.position(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
    }

    /// Uniform init in `[-scale, scale]`.
    pub fn insert_uniform<R: Rng>(&mut self, name: &str, shape: (usize, usize), scale: f64, rng: &mut R) {
        let t = Tensor::from_shape_fn(shape, |_| rng.gen_range(-scale..=scale));
        self.insert(name, t);
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = self.position(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.values[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self.position(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.values[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Appends every entry of `other`, which must not share names with `self`.
    pub fn extend(&mut self, other: ParamStore) {
        for (n, v) in other.names.into_iter().zip(other.values) {
            self.insert(n, v);
        }
    }

    /// Pushes every parameter onto `g` as a gradient-tracking leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| g.param(v.clone())).collect(),
            names: self.names.clone(),
        }
    }
}

/// Parameters bound to one graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    names: Vec<String>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in store order; parameters the loss never touched get zeros.
    pub fn grads(&self, g: &Graph, store: &ParamStore) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(store.values())
            .map(|(v, p)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.dim())))
            .collect()
    }
}
