//! Ordered, named parameter collections.
//!
//! Construction order is the canonical order: optimizer state, gradient
//! accumulators, and checkpoints all index parameters by their position
//! here, which makes training bit-reproducible.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numkernel::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Registers a tensor as a trainable parameter under `name`.
    pub fn register(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let idx = self.tensors.len();
        self.by_name.insert(name.clone(), idx);
        self.names.push(name);
        self.tensors.push(t.into_param());
        idx
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.by_name[name]]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn at(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn at_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Copies values from another set with identical layout (names + shapes).
    pub fn load_values_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::contract("parameter sets have different layouts"));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::contract("parameter shapes differ"));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Overwrites a parameter's values by name, shape-checked.
    pub fn set_values(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let idx = *self
            .by_name
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))?;
        let t = &mut self.tensors[idx];
        if t.numel() != values.len() {
            return Err(Error::contract(format!("parameter {name} has {} values, got {}", t.numel(), values.len())));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }
}
