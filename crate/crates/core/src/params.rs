//! Named parameter store. Parameter names are stable strings (sorted map)
//! so checkpoints, gradient maps, and optimizer state all line up and
//! serialize in one deterministic order.

use std::collections::BTreeMap;

use rand_chacha::rand_core::RngCore;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::RawTensor;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, RawTensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tensors(tensors: BTreeMap<String, RawTensor>) -> Self {
        ModelParams { tensors }
    }

    pub fn insert(&mut self, name: &str, t: RawTensor) -> Result<()> {
        if self.tensors.contains_key(name) {
            return Err(Error::Config(format!("parameter `{name}` already exists")));
        }
        self.tensors.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&RawTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut RawTensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &RawTensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn tensors(&self) -> &BTreeMap<String, RawTensor> {
        &self.tensors
    }

    /// Weight matrix initialized uniformly in ±sqrt(6 / (fan_in + fan_out)),
    /// drawn from a per-parameter seeded stream so adding or removing other
    /// parameters never shifts this one's values.
    pub fn insert_weight(&mut self, name: &str, rows: usize, cols: usize, seed: u64) -> Result<()> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let mut stream = rng::stream(seed, &format!("init/{name}"));
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| (2.0 * rng::unit_f64(stream.next_u64()) - 1.0) * bound)
            .collect();
        self.insert(name, RawTensor::new(data, vec![rows, cols])?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<()> {
        self.insert(name, RawTensor::zeros(shape))
    }

    /// Rank-1 vector initialized like a weight row (fan_in = len, fan_out = 1).
    pub fn insert_vector(&mut self, name: &str, len: usize, seed: u64) -> Result<()> {
        let bound = (6.0 / (len + 1) as f64).sqrt();
        let mut stream = rng::stream(seed, &format!("init/{name}"));
        let data: Vec<f64> = (0..len)
            .map(|_| (2.0 * rng::unit_f64(stream.next_u64()) - 1.0) * bound)
            .collect();
        self.insert(name, RawTensor::new(data, vec![len])?)
    }
}
