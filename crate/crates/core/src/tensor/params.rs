//! Named parameter sets.
//!
//! Parameters are declared first (name, shape, init) and materialized later,
//! so full-scale configurations can be enumerated and counted without
//! allocating their storage. Each tensor is initialized from an RNG stream
//! keyed by its name, so initial values do not depend on declaration order.

use std::collections::{BTreeSet, HashMap};

use super::{fnv1a, RngStream, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal(0, std) truncated at two standard deviations.
    TruncNormal(f64),
    Zeros,
    Ones,
}

impl Init {
    pub const WEIGHT: Init = Init::TruncNormal(0.02);
}

#[derive(Clone, Debug)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        if !self.tensors.is_empty() {
            return Err(Error::Contract("cannot declare after materialize".into()));
        }
        let id = self.specs.len();
        self.index.insert(name.clone(), id);
        self.specs.push(ParamSpec { name, shape: shape.to_vec(), init });
        Ok(ParamId(id))
    }

    /// Allocates and initializes every declared tensor.
    pub fn materialize(&mut self, rng: &RngStream) {
        self.tensors = self
            .specs
            .iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data = match spec.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::TruncNormal(std) => {
                        let mut r = rng.split(fnv1a(spec.name.as_bytes()));
                        (0..n).map(|_| r.trunc_normal(std)).collect()
                    }
                };
                Tensor::new(spec.shape.clone(), data)
                    .expect("declared shape")
                    .with_requires_grad(true)
            })
            .collect();
    }

    pub fn is_materialized(&self) -> bool {
        self.tensors.len() == self.specs.len()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.specs[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.specs[id.0].shape
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.tensor(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.specs.len()).map(ParamId)
    }

    /// Names in declaration order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn name_set(&self) -> BTreeSet<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    pub fn numel(&self, id: ParamId) -> usize {
        self.specs[id.0].shape.iter().product()
    }

    /// Total scalar count, available before materialization.
    pub fn count(&self) -> usize {
        self.ids().map(|id| self.numel(id)).sum()
    }

    /// Scalar count restricted to `names`.
    pub fn count_of<'a>(&self, names: impl IntoIterator<Item = &'a String>) -> usize {
        names
            .into_iter()
            .filter_map(|n| self.id(n))
            .map(|id| self.numel(id))
            .sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Marks exactly the named tensors as requiring gradients.
    pub fn set_trainable(&mut self, trainable: &BTreeSet<String>) {
        for (spec, t) in self.specs.iter().zip(self.tensors.iter_mut()) {
            t.set_requires_grad(trainable.contains(&spec.name));
        }
    }

    /// Replaces the value of an existing parameter, checking its shape.
    pub fn assign(&mut self, name: &str, value: &Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if self.shape(id) != value.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: expected shape {:?}, got {:?}",
                self.shape(id),
                value.shape()
            )));
        }
        let t = self.tensor_mut(id);
        t.data_mut().copy_from_slice(value.data());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent() {
        let rng = RngStream::new(5);
        let mut a = ParamStore::new();
        a.declare("x.weight", &[3, 2], Init::WEIGHT).unwrap();
        a.declare("y.weight", &[2], Init::WEIGHT).unwrap();
        a.materialize(&rng);
        let mut b = ParamStore::new();
        b.declare("y.weight", &[2], Init::WEIGHT).unwrap();
        b.declare("x.weight", &[3, 2], Init::WEIGHT).unwrap();
        b.materialize(&rng);
        assert_eq!(a.get("x.weight").unwrap().data(), b.get("x.weight").unwrap().data());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.declare("a", &[1], Init::Zeros).unwrap();
        assert!(s.declare("a", &[1], Init::Zeros).is_err());
    }

    #[test]
    fn count_without_materializing() {
        let mut s = ParamStore::new();
        s.declare("big", &[1024, 4096], Init::WEIGHT).unwrap();
        assert_eq!(s.count(), 1024 * 4096);
        assert!(!s.is_materialized());
    }
}
