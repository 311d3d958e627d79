use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Array, NumericsError};

/// Index of a trainable tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Array,
}

/// Named, ordered collection of trainable tensors.
///
/// Registration order is the canonical order for checkpoints and for the
/// optimizer's moment buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        self.entries.push(ParamEntry { name, value });
        ParamId(self.entries.len() - 1)
    }

    /// Normal(0, std) initialization.
    pub fn normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        let value = Array::new(shape.to_vec(), data).expect("shape matches data");
        self.add(name, value)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Array::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Array::ones(shape))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Replace all values, checking names and shapes line up.
    pub fn load(&mut self, entries: Vec<ParamEntry>) -> Result<(), NumericsError> {
        if entries.len() != self.entries.len() {
            return Err(NumericsError::Shape(format!(
                "expected {} parameters, got {}",
                self.entries.len(),
                entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter().zip(&entries) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(NumericsError::Shape(format!(
                    "parameter mismatch: {} {:?} vs {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
        }
        self.entries = entries;
        Ok(())
    }
}
