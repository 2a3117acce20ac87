use std::collections::HashMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::array::Array;
use crate::error::{Error, Result};

/// Handle to an entry of a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Array,
    pub grad: Array,
    pub trainable: bool,
}

/// Named learnable arrays with their gradient accumulators.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) grads: Vec<(ParamId, Array)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.grads.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(ParamId, Array)> {
        self.grads.iter()
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: Gradients) {
        for (id, g) in other.grads {
            match self.grads.iter_mut().find(|(p, _)| *p == id) {
                Some((_, acc)) => acc.add_assign(&g),
                None => self.grads.push((id, g)),
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, g) in &mut self.grads {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::domain(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        let grad = Array::zeros(value.shape());
        self.entries.push(ParamEntry {
            name: name.clone(),
            value,
            grad,
            trainable,
        });
        self.index.insert(name, id);
        Ok(id)
    }

    /// Glorot-uniform `rows × cols` weight.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Array::matrix(rows, cols, data)?, true)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Array::zeros(shape), true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array {
        &self.entries[id.0].grad
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    /// Sets the trainable flag on every entry whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.trainable = trainable;
            }
        }
    }

    pub fn freeze_all(&mut self) {
        self.set_trainable("", false);
    }

    pub fn all_frozen(&self) -> bool {
        self.entries.iter().all(|e| !e.trainable)
    }

    /// Adds gradients into the accumulators of trainable entries.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.grads {
            let e = &mut self.entries[id.0];
            if e.trainable {
                e.grad.add_assign(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            for v in e.grad.data_mut() {
                *v = 0.0;
            }
        }
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    /// SHA-256 over names, shapes and value bits.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            for &d in e.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in e.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}
