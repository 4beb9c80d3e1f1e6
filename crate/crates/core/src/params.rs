//! Named parameter storage.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Learnable tensors keyed by stable dotted names, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), requires_grad)))
            .collect();
        BoundParams { vars }
    }

    /// Uniform in `±√(1/fan_in)`.
    pub fn init_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) {
        let bound = (1.0 / fan_in as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound));
        self.insert(name, t);
    }
}

/// Tape handles for a [`ParamStore`].
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    /// Snapshot of accumulated gradients; zeros for unbound-gradient leaves.
    pub fn gradients(&self, tape: &Tape) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let g = tape
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
                (k.clone(), g)
            })
            .collect()
    }
}
