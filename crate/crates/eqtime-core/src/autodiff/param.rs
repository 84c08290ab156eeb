//! Named trainable parameters and the flat set a model owns.

use serde::{Deserialize, Serialize};

use crate::autodiff::TensorValue;
use crate::error::{Error, Result};

/// A named tensor owned by a model. Trainable parameters carry a gradient
/// buffer while training; frozen ones never do.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: TensorValue,
    pub trainable: bool,
}

/// Stable index of a parameter within its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef(pub(crate) usize);

impl ParamRef {
    pub(crate) fn index(self) -> usize {
        self.0
    }
}

/// The ordered collection of a model's parameters. Names are unique;
/// layers hold [`ParamRef`]s rather than strings.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamSet {
    items: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: TensorValue, trainable: bool) -> Result<ParamRef> {
        let name = name.into();
        if self.items.iter().any(|p| p.name == name) {
            return Err(Error::Contract(format!("duplicate parameter name {name:?}")));
        }
        let mut value = value;
        if trainable {
            value.ensure_grad();
        }
        self.items.push(Parameter {
            name,
            value,
            trainable,
        });
        Ok(ParamRef(self.items.len() - 1))
    }

    pub fn get(&self, r: ParamRef) -> &Parameter {
        &self.items[r.0]
    }

    pub fn get_mut(&mut self, r: ParamRef) -> &mut Parameter {
        &mut self.items[r.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.items.iter().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.items.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.items.iter_mut()
    }

    pub fn refs(&self) -> impl Iterator<Item = ParamRef> {
        (0..self.items.len()).map(ParamRef)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.items {
            p.value.zero_grad();
        }
    }

    /// Total number of scalar components across trainable parameters.
    pub fn trainable_len(&self) -> usize {
        self.items
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut ps = ParamSet::new();
        ps.push("w", TensorValue::zeros(vec![2, 2]), true).unwrap();
        assert!(ps.push("w", TensorValue::zeros(vec![2]), true).is_err());
    }

    #[test]
    fn trainable_params_carry_grads() {
        let mut ps = ParamSet::new();
        let r = ps.push("w", TensorValue::zeros(vec![3]), true).unwrap();
        assert!(ps.get(r).value.grad().is_some());
        let f = ps.push("c", TensorValue::zeros(vec![3]), false).unwrap();
        assert!(ps.get(f).value.grad().is_none());
    }
}
