//! Named parameter storage shared by every layer.
//!
//! Layers hold [`ParamId`]s; each forward pass binds the store into a fresh
//! [`Graph`] and resolves ids to [`Var`]s through [`Bound`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

/// Which optimizer step owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    Main,
    Discriminator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, group, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_in(&self, group: Group) -> Vec<ParamId> {
        self.ids().filter(|id| self.entries[id.0].group == group).collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Registers every parameter as a `requires_grad` leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        self.bind_where(g, |_| true)
    }

    /// Registers parameters, marking only those whose group passes
    /// `trainable` as `requires_grad`; the rest enter as constants.
    pub fn bind_where(&self, g: &mut Graph, trainable: impl Fn(Group) -> bool) -> Result<Bound> {
        let vars = self
            .entries
            .iter()
            .map(|e| g.leaf(e.value.clone(), trainable(e.group)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars })
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }
}

/// Parameter ids resolved against one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps vars laid out in store order, e.g. leaves created by a
    /// gradient check over [`ParamStore::values`].
    pub fn from_vars(vars: &[Var]) -> Self {
        Bound { vars: vars.to_vec() }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// `Uniform(−bound, bound)` tensor.
pub fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("uniform shape")
}

/// `x · W + b` with `W: in × out` and `b: 1 × out`.
#[derive(Clone, Debug)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Affine {
    /// Weights `Uniform(±1/√in)`, zero bias.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: Group,
        input_dim: usize,
        output_dim: usize,
    ) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            group,
            uniform(rng, &[input_dim, output_dim], bound),
        );
        let bias = store.add(format!("{name}.bias"), group, Tensor::zeros(&[1, output_dim]));
        Affine {
            weight,
            bias,
            input_dim,
            output_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.affine(x, p.var(self.weight), p.var(self.bias))
    }
}
