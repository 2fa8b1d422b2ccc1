use std::collections::HashMap;

use rand::Rng;

use super::Array;
use crate::error::{Error, Result};

/// Handle to one named array inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable arrays, kept in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<Array>,
    by_name: HashMap<String, ParamId>,
}

impl Default for ParameterStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore {
            names: Vec::new(),
            values: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a new parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Array) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.values.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar values across every parameter.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    /// Fills every parameter with independent draws from `uniform(-scale, scale)`.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        for value in &mut self.values {
            for x in value.data_mut() {
                *x = rng.random_range(-scale..scale);
            }
        }
    }

    pub fn zero_all(&mut self) {
        self.values.iter_mut().for_each(|v| v.fill(0.0));
    }
}

/// Gradient slots aligned one-to-one with a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    slots: Vec<Array>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Gradients {
            slots: store.values.iter().map(|v| Array::zeros(v.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.slots[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.slots[id.0]
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array)> {
        self.slots.iter().enumerate().map(|(i, a)| (ParamId(i), a))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Array)> {
        self.slots
            .iter_mut()
            .enumerate()
            .map(|(i, a)| (ParamId(i), a))
    }

    /// L2 norm over all slots concatenated.
    pub fn global_norm(&self) -> f64 {
        self.slots.iter().map(Array::sum_squares).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for slot in &mut self.slots {
            slot.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += factor * y;
            }
        }
    }

    pub fn zero(&mut self) {
        self.slots.iter_mut().for_each(|s| s.fill(0.0));
    }
}
