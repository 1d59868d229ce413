use super::{Float, Tensor};
use crate::error::{ensure, Result};

/// Handle to a tensor owned by a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    /// Additive bias or layer-norm shift.
    pub is_bias: bool,
}

/// Owns every trainable tensor of one side of the system.
///
/// Models keep `ParamId`s into the store, so a tensor referenced from several
/// places (tied embeddings) is a single entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, is_bias: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            tensor: tensor.with_requires_grad(true),
            is_bias,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Adds every gradient in `grads` into the matching tensor's `grad`.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        ensure!(
            grads.params.len() <= self.params.len(),
            "gradients reference {} parameters but the store holds {}",
            grads.params.len(),
            self.params.len()
        );
        for (param, grad) in self.params.iter_mut().zip(&grads.params) {
            if let Some(g) = grad {
                param.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }
}

/// Result of one reverse pass: per-parameter and per-node gradients.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) params: Vec<Option<Vec<Float>>>,
    pub(crate) nodes: Vec<Option<Vec<Float>>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[Float]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to any recorded node, e.g. a constant input.
    pub fn node(&self, var: super::Var) -> Option<&[Float]> {
        self.nodes.get(var.0).and_then(|g| g.as_deref())
    }
}
