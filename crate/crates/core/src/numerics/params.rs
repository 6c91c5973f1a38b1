use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// A learnable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }
}

/// Named parameter collection. Names are the stable ids used by graphs,
/// optimizers and checkpoints; iteration order is lexicographic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter id `{name}`")));
        }
        self.params.insert(name, Parameter::new(value));
        Ok(())
    }

    /// Inserts or overwrites.
    pub fn set(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), Parameter::new(value));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor, scale: f64) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.grad.shape() != grad.shape() {
            return Err(Error::dim("accumulate_grad", p.grad.shape(), grad.shape()));
        }
        p.grad.add_assign_scaled(grad, scale);
        Ok(())
    }

    /// Parameters whose id starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a Parameter)> + 'a {
        self.params.iter().filter(move |(k, _)| k.starts_with(prefix))
    }

    pub fn total_elements(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }
}

/// Weight initializers used by the model builders.
pub mod init {
    use super::*;

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches")
    }

    /// Fan-in scaled uniform, the usual default for dense and conv layers.
    pub fn fan_in<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
        uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt(), rng)
    }

    pub fn normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches")
    }
}
