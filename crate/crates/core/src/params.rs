//! Named parameter storage shared by the networks and optimizers.
//!
//! Parameters are plain tensors registered under stable names (used by
//! checkpoints). Each parameter tensor is kept in tracked form so forward
//! passes can request gradients for it; the optimizer replaces the tensor
//! wholesale after an update step.

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate parameter name {name}"
        );
        let t = Tensor::from_vec(shape, data).tracked();
        self.entries.push((name, t));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Current tracked tensor for a parameter.
    pub fn tensor(&self, id: ParamId) -> Tensor {
        self.entries[id.0].1.clone()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        self.entries[id.0].1.shape()
    }

    /// Replaces a parameter's value (shape must match). The new tensor is a
    /// fresh tracked leaf.
    pub fn set_data(&mut self, id: ParamId, data: Vec<f32>) {
        let shape = self.entries[id.0].1.shape().to_vec();
        self.entries[id.0].1 = Tensor::from_vec(&shape, data).tracked();
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn all_tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Raw values of every parameter, in registration order.
    pub fn snapshot(&self) -> Vec<Vec<f32>> {
        self.entries.iter().map(|(_, t)| t.to_vec()).collect()
    }

    /// Restores values captured by [`ParamStore::snapshot`].
    pub fn restore(&mut self, snap: &[Vec<f32>]) {
        assert_eq!(snap.len(), self.entries.len());
        for (i, data) in snap.iter().enumerate() {
            self.set_data(ParamId(i), data.clone());
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}
