use std::ops::Index;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

/// Parameters bound as leaves on one tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl Index<ParamId> for BoundParams {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl BoundParams {
    /// Wraps vars in store order, e.g. to substitute one parameter with another leaf.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        BoundParams { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient per parameter, zero-filled where the loss did not depend on it.
    pub fn collect_grads(&self, store: &ParamStore, grads: &mut Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(store.values())
            .map(|(&v, value)| {
                grads.take(v).unwrap_or_else(|| {
                    Tensor::new(value.shape().to_vec(), vec![0.0; value.numel()])
                        .expect("shape of an existing tensor")
                })
            })
            .collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Copies every parameter onto `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let trainable = tape.is_recording();
        BoundParams {
            vars: self
                .values
                .iter()
                .map(|v| tape.leaf(v.clone(), trainable))
                .collect(),
        }
    }

    /// Replaces values from a loaded set, requiring identical names and shapes.
    pub fn load_from(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.values.len(),
                entries.len()
            )));
        }
        for ((name, value), (own_name, own)) in
            entries.iter().zip(self.names.iter().zip(&self.values))
        {
            if name != own_name {
                return Err(Error::Checkpoint(format!(
                    "tensor order mismatch: expected {own_name}, found {name}"
                )));
            }
            if value.shape() != own.shape() {
                return Err(Error::Checkpoint(format!(
                    "dimension mismatch for {name}: model expects {:?}, checkpoint has {:?}",
                    own.shape(),
                    value.shape()
                )));
            }
        }
        self.values = entries.into_iter().map(|(_, v)| v).collect();
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }
}
