use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use rand::Rng;
use std::collections::HashMap;

/// Stable handle to a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces the tensor under `name`, keeping the shape contract.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Param(format!("unknown parameter {name}")))?;
        let slot = &mut self.tensors[id.0];
        if slot.shape() != tensor.shape() {
            return Err(Error::Shape {
                op: "ParamStore::set",
                lhs: slot.shape().to_vec(),
                rhs: tensor.shape().to_vec(),
            });
        }
        *slot = tensor;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    /// Inserts every parameter as a graph leaf. Parameters for which
    /// `trainable` returns false become constants.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(ParamId) -> bool) -> Bound {
        let vars = self
            .ids()
            .map(|id| {
                let mut t = self.tensors[id.0].clone();
                t.clear_grad();
                if trainable(id) {
                    g.leaf(t.with_requires_grad(true))
                } else {
                    g.constant(t)
                }
            })
            .collect();
        Bound { vars }
    }

    /// Adds the gradients accumulated on `bound` leaves into this store.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &Bound) {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.vars) {
            if let Some(grad) = g.grad(v) {
                for (a, b) in t.grad_mut().iter_mut().zip(grad) {
                    *a += b;
                }
            }
        }
    }
}

/// Graph leaves for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub(crate) fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Registers freshly initialized parameters under a name prefix.
pub struct ParamBuilder<'a, R: Rng> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
    prefix: String,
}

impl<'a, R: Rng> ParamBuilder<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Runs `f` with `segment` appended to the name prefix.
    pub fn scope<T>(&mut self, segment: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let saved = self.prefix.clone();
        self.prefix = if saved.is_empty() {
            segment.to_string()
        } else {
            format!("{saved}.{segment}")
        };
        let out = f(self);
        self.prefix = saved;
        out
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`, where `fan_in` is the first dimension.
    pub fn uniform(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        let fan_in = shape.first().copied().unwrap_or(1).max(1) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        let t = Tensor::new(shape, data).expect("positive shape");
        let name = self.full_name(name);
        self.store.insert(name, t)
    }

    /// Uniform in `±1/sqrt(fan_in)` with an explicit fan-in.
    pub fn uniform_fan_in(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        let t = Tensor::new(shape, data).expect("positive shape");
        let name = self.full_name(name);
        self.store.insert(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: Vec<usize>, value: f64) -> ParamId {
        let name = self.full_name(name);
        self.store.insert(name, Tensor::full(shape, value))
    }
}
