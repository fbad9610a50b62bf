//! Named trainable tensors, grouped per component.

use crate::autodiff::{ParamKey, Tape, Tensor, Var};

pub const BACKBONE_GROUP: u16 = 0;
pub const MEMORY_GROUP: u16 = 1;
pub const BOW_GROUP: u16 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(u32);

/// Ordered list of named tensors belonging to one component. Insertion
/// order is the order used by checkpoints and the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    group: u16,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamGroup {
    pub fn new(group: u16) -> Self {
        ParamGroup {
            group,
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn id(&self) -> u16 {
        self.group
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t.with_requires_grad());
        ParamId(self.tensors.len() as u32 - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0 as usize]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0 as usize]
    }

    pub fn key(&self, id: ParamId) -> ParamKey {
        ParamKey {
            group: self.group,
            index: id.0,
        }
    }

    pub fn bind(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param(self.key(id), self.get(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn tensor_at(&self, index: u32) -> Option<&Tensor> {
        self.tensors.get(index as usize)
    }

    pub fn tensor_at_mut(&mut self, index: u32) -> Option<&mut Tensor> {
        self.tensors.get_mut(index as usize)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}
