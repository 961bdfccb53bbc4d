use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered registry of named parameters.
///
/// Registration order is the serialization and optimizer order, so two
/// models built from the same configuration have identical registries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a tape leaf, in registry order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t)).collect()
    }

    /// Adds `scale ×` the gradient of each bound variable into its parameter.
    ///
    /// Parameters the loss does not reach receive an explicit zero gradient.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &[Var], scale: f64) -> Result<()> {
        if bound.len() != self.tensors.len() {
            return Err(Error::shape("accumulate", &[self.tensors.len()], &[bound.len()]));
        }
        for (t, &v) in self.tensors.iter_mut().zip(bound) {
            if !t.requires_grad() {
                continue;
            }
            match grads.get(v) {
                Some(g) => t.accumulate_grad(g, scale)?,
                None => {
                    let zeros = vec![0.0; t.numel()];
                    t.accumulate_grad(&zeros, 0.0)?
                }
            }
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    /// Copies parameter values from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint("parameter names differ".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::shape("copy_values_from", a.shape(), b.shape()));
            }
            a.data_mut().copy_from_slice(b.data());
        }
        Ok(())
    }
}
