use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered registry of learned tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add(&mut self, name: String, tensor: Tensor) -> ParamId {
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// `(name, tensor)` pairs in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Replaces the value of `name`, keeping its dims.
    pub fn assign(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Config(alloc::format!("unknown parameter {name}")))?;
        let slot = &mut self.tensors[id.0];
        if slot.dims() != tensor.dims() {
            return Err(Error::shape("assign", slot.dims(), tensor.dims()));
        }
        *slot = tensor;
        Ok(())
    }

    /// Fills every registered tensor from `named`. Each name must appear
    /// exactly once and nothing extra may be present.
    pub fn fill_from<I>(&mut self, named: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, Tensor)>,
    {
        let mut seen = alloc::vec![false; self.len()];
        for (name, tensor) in named {
            let id = self
                .id(&name)
                .ok_or_else(|| Error::Config(alloc::format!("unexpected tensor {name}")))?;
            if core::mem::replace(&mut seen[id.0], true) {
                return Err(Error::Config(alloc::format!("tensor {name} given twice")));
            }
            self.assign(&name, tensor)?;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Config(alloc::format!("missing tensor {}", self.names[i])));
        }
        Ok(())
    }
}
