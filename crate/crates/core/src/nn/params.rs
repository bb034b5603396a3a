use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{lit, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to one parameter inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Every trainable tensor, keyed by dotted path, each with a gradient
/// buffer of the same shape. Insertion order is stable and defines the
/// checkpoint layout.
#[derive(Debug, Clone)]
pub struct ParameterStore<S> {
    index: IndexMap<String, usize>,
    values: Vec<Tensor<S>>,
    grads: Vec<Tensor<S>>,
}

impl<S: Real> Default for ParameterStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> ParameterStore<S> {
    pub fn new() -> Self {
        Self {
            index: IndexMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let id = self.values.len();
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.index.insert(name, id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.index.get_index(id.0).expect("valid id").0
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.grads[id.0]
    }

    /// Values and gradients borrowed together, for backward passes that read
    /// weights while accumulating into gradient buffers.
    pub fn split_mut(&mut self) -> (&[Tensor<S>], &mut [Tensor<S>]) {
        (&self.values, &mut self.grads)
    }

    /// Values, gradients, mutably; used by optimizers.
    pub fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut Tensor<S>, &Tensor<S>)> {
        self.values.iter_mut().zip(self.grads.iter())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(Tensor::fill_zero);
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn cast<T: Real>(&self) -> ParameterStore<T> {
        ParameterStore {
            index: self.index.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            grads: self.grads.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Seeded parameter initializer. Draws in `f64` and rounds into `S`, so the
/// same seed gives the same weights (up to rounding) in either precision.
pub struct Initializer {
    rng: ChaCha8Rng,
    std: f64,
}

impl Initializer {
    pub fn new(seed: u64, std: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            std,
        }
    }

    pub fn normal<S: Real>(&mut self, shape: &[usize]) -> Tensor<S> {
        let dist = Normal::new(0.0, self.std).expect("valid std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| lit(dist.sample(&mut self.rng))).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches")
    }

    pub fn constant<S: Real>(&mut self, shape: &[usize], value: f64) -> Tensor<S> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![lit(value); n]).expect("shape matches")
    }
}
