use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Trainable parameters of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Ordered per-layer parameters of a model or of one of its modules.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new(entries: Vec<ParamEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Spec(format!("duplicate parameter name `{}`", e.name)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn into_entries(self) -> Vec<ParamEntry> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.weights.len() + e.bias.len()).sum()
    }

    /// `(name, weight shape, bias shape)` for every entry.
    pub fn signature(&self) -> Vec<(&str, &[usize], &[usize])> {
        self.entries
            .iter()
            .map(|e| (e.name.as_str(), e.weights.shape(), e.bias.shape()))
            .collect()
    }

    pub fn is_compatible(&self, other: &ParamSet) -> bool {
        self.signature() == other.signature()
    }

    pub fn ensure_compatible(&self, other: &ParamSet, context: &str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::shape(
                context,
                format!("{} parameter entries vs {}", self.len(), other.len()),
            ));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.weights.shape() != b.weights.shape() || a.bias.shape() != b.bias.shape() {
                return Err(Error::shape(
                    context,
                    format!(
                        "entry `{}` {:?}/{:?} does not match `{}` {:?}/{:?}",
                        a.name,
                        a.weights.shape(),
                        a.bias.shape(),
                        b.name,
                        b.weights.shape(),
                        b.bias.shape()
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    weights: Tensor::zeros(e.weights.shape()),
                    bias: Tensor::zeros(e.bias.shape()),
                })
                .collect(),
        }
    }

    /// Appends `other`'s entries after this set's.
    pub fn concat(mut self, other: ParamSet) -> Result<ParamSet> {
        self.entries.extend(other.entries);
        ParamSet::new(self.entries)
    }

    /// Splits off the trailing entries starting at `at`.
    pub fn split_off(mut self, at: usize) -> (ParamSet, ParamSet) {
        let tail = self.entries.split_off(at);
        (self, ParamSet { entries: tail })
    }

    /// All scalars in entry order, weights before bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for e in &self.entries {
            out.extend_from_slice(e.weights.data());
            out.extend_from_slice(e.bias.data());
        }
        out
    }

    /// Mutable views over every scalar buffer, in `flatten` order.
    pub fn buffers_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.entries
            .iter_mut()
            .flat_map(|e| [e.weights.data_mut(), e.bias.data_mut()])
    }

    pub fn buffers(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().flat_map(|e| [e.weights.data(), e.bias.data()])
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.is_compatible(other)
            && self
                .buffers()
                .zip(other.buffers())
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()))
    }

    /// Largest absolute elementwise difference; `None` if incompatible.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Option<f64> {
        if !self.is_compatible(other) {
            return None;
        }
        Some(
            self.buffers()
                .zip(other.buffers())
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max),
        )
    }
}
