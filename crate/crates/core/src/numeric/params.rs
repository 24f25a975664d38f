use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named parameters with a trainable flag. Iteration is lexicographic by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
}

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Tensor>;

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.entries.insert(name, Param { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(|p| &p.tensor)
    }

    pub(crate) fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn replace(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let slot = self.tensor_mut(name)?;
        if slot.shape() != tensor.shape() {
            return Err(Error::shape(
                "replace",
                format!("{name}: {:?} vs {:?}", slot.shape(), tensor.shape()),
            ));
        }
        *slot = tensor;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries.iter().filter(|(_, p)| p.trainable).map(|(n, _)| n.clone()).collect()
    }

    /// Sets every parameter's trainable flag from a predicate on its name.
    pub fn set_trainable_by(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, p) in self.entries.iter_mut() {
            p.trainable = pred(name);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.tensor.numel()).sum()
    }

    pub fn num_scalars_by(&self, pred: impl Fn(&str) -> bool) -> usize {
        self.entries.iter().filter(|(n, _)| pred(n)).map(|(_, p)| p.tensor.numel()).sum()
    }

    /// Moves all entries of `other` into `self`; names must not collide.
    pub fn extend(&mut self, other: ParamSet) -> Result<()> {
        for (name, p) in other.entries {
            self.insert(name, p.tensor, p.trainable)?;
        }
        Ok(())
    }

    /// Subset of entries whose names satisfy `pred`.
    pub fn filtered(&self, pred: impl Fn(&str) -> bool) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(n, _)| pred(n))
                .map(|(n, p)| (n.clone(), p.clone()))
                .collect(),
        }
    }

    /// SHA-256 over names, shapes and little-endian bytes of the selected group.
    pub fn checksum_by(&self, pred: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, p) in self.entries.iter().filter(|(n, _)| pred(n)) {
            h.update(name.as_bytes());
            h.update([0u8]);
            for s in p.tensor.shape() {
                h.update((*s as u64).to_le_bytes());
            }
            h.update(p.tensor.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn checksum(&self) -> String {
        self.checksum_by(|_| true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::scalar(1.0), true).unwrap();
        assert!(matches!(p.insert("a", Tensor::scalar(2.0), true), Err(Error::DuplicateParam(_))));
    }

    #[test]
    fn iteration_is_lexicographic() {
        let mut p = ParamSet::new();
        for n in ["b", "a", "c.1", "c.0"] {
            p.insert(n, Tensor::scalar(0.0), true).unwrap();
        }
        let names: Vec<_> = p.names().cloned().collect();
        assert_eq!(names, vec!["a", "b", "c.0", "c.1"]);
    }

    #[test]
    fn checksum_tracks_bytes() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(1.0), true).unwrap();
        let before = p.checksum();
        p.replace("w", Tensor::scalar(1.0)).unwrap();
        assert_eq!(before, p.checksum());
        p.replace("w", Tensor::scalar(1.0 + f32::EPSILON)).unwrap();
        assert_ne!(before, p.checksum());
    }
}
