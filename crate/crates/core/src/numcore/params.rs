use std::ops::{Index, IndexMut};

use indexmap::IndexMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameter values, indexable by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamValues(Vec<Tensor>);

/// Gradient accumulators, one per parameter, same shapes as the values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradBuffers(Vec<Tensor>);

impl Index<ParamId> for ParamValues {
    type Output = Tensor;
    fn index(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }
}

impl Index<ParamId> for GradBuffers {
    type Output = Tensor;
    fn index(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }
}

impl IndexMut<ParamId> for GradBuffers {
    fn index_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.0[id.0]
    }
}

impl GradBuffers {
    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter()
    }
}

/// Named parameters with their gradient buffers, iterated in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: IndexMap<String, ParamId>,
    values: ParamValues,
    grads: GradBuffers,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.values.0.len());
        self.grads.0.push(Tensor::zeros(value.shape()));
        self.values.0.push(value);
        self.names.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.0.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.names
            .get_index(id.0)
            .map(|(n, _)| n.as_str())
            .expect("ParamId from another store")
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values.0[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id]
    }

    pub fn values(&self) -> &ParamValues {
        &self.values
    }

    pub fn grads(&self) -> &GradBuffers {
        &self.grads
    }

    /// Read access to the values alongside write access to the gradients.
    pub fn split_mut(&mut self) -> (&ParamValues, &mut GradBuffers) {
        (&self.values, &mut self.grads)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.len()).map(ParamId)
    }

    /// `(name, value, gradient)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.names
            .iter()
            .map(|(n, &id)| (n.as_str(), &self.values[id], &self.grads[id]))
    }

    pub fn zero_grads(&mut self) {
        self.grads.0.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.values.0.iter().map(Tensor::len).sum()
    }

    /// Replaces every value with the same-named value of `other`; names and
    /// shapes must agree.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Contract(format!(
                "parameter count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (name, &id) in &self.names {
            let src = other
                .id(name)
                .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))?;
            let src = &other.values[src];
            if !src.same_shape(&self.values[id]) {
                return Err(Error::dim(format!(
                    "parameter `{name}`: {:?} vs {:?}",
                    src.shape(),
                    self.values[id].shape()
                )));
            }
            self.values.0[id.0] = src.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut store = ParamStore::new();
        let b = store.insert("b", Tensor::zeros(&[2])).unwrap();
        let a = store.insert("a", Tensor::zeros(&[3, 1])).unwrap();
        assert!(store.insert("a", Tensor::zeros(&[1])).is_err());
        let names: Vec<_> = store.iter().map(|(n, _, _)| n).collect();
        assert_eq!(names, ["b", "a"]);
        assert_eq!(store.id("a"), Some(a));
        assert_eq!(store.name(b), "b");
        assert_eq!(store.grad(a).shape(), &[3, 1]);
        assert_eq!(store.num_elements(), 5);
    }
}
