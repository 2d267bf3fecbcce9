use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    tensor: Tensor,
    trainable: bool,
}

/// Named tensors in sorted name order.
///
/// Cloning gives a fully independent store.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Insert a new trainable entry; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(
            name,
            Entry {
                tensor,
                trainable: true,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.tensor)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|e| e.trainable = trainable)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.tensor))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries
            .iter_mut()
            .map(|(k, e)| (k.as_str(), &mut e.tensor))
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        let entries = self
            .entries
            .iter()
            .filter_map(|(k, e)| k.strip_prefix(prefix).map(|s| (s.to_string(), e.clone())))
            .collect();
        ParamStore { entries }
    }

    /// Entries whose name starts with `prefix`, names kept whole.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let entries = self
            .entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, e)| (k.clone(), e.clone()))
            .collect();
        ParamStore { entries }
    }

    /// Add every entry of `other` under `prefix`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &ParamStore) -> Result<()> {
        for (k, e) in &other.entries {
            self.insert(format!("{prefix}{k}"), e.tensor.clone())?;
            self.set_trainable(&format!("{prefix}{k}"), e.trainable)?;
        }
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        for e in self.entries.values_mut() {
            e.tensor.round_to_f32();
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    /// Register every entry on `tape`: trainable entries selected by
    /// `train` become gradient leaves, the rest constants.
    pub fn bind<'t>(&self, tape: &'t Tape, train: impl Fn(&str) -> bool) -> BoundParams<'t> {
        let vars = self
            .entries
            .iter()
            .map(|(k, e)| {
                let grad = e.trainable && train(k);
                let v = if grad {
                    tape.param(e.tensor.clone())
                } else {
                    tape.constant(e.tensor.clone())
                };
                (k.clone(), (v, grad))
            })
            .collect();
        BoundParams { vars }
    }

    pub fn bind_constant<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        self.bind(tape, |_| false)
    }
}

/// A [`ParamStore`] registered on one tape.
pub struct BoundParams<'t> {
    vars: BTreeMap<String, (Var<'t>, bool)>,
}

impl<'t> BoundParams<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .map(|(v, _)| *v)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    /// Swap in another var for an existing entry, e.g. to differentiate
    /// with respect to one tensor from outside.
    pub fn replace(&mut self, name: &str, var: Var<'t>) -> Result<()> {
        let slot = self
            .vars
            .get_mut(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))?;
        if slot.0.shape() != var.shape() {
            return Err(Error::ShapeMismatch {
                op: "replace",
                left: slot.0.shape(),
                right: var.shape(),
            });
        }
        *slot = (var, var.requires_grad());
        Ok(())
    }

    /// Gradients of the trainable leaves after `tape.backward`; leaves the
    /// loss does not reach get zeros.
    pub fn grads(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter(|(_, (_, g))| *g)
            .map(|(k, (v, _))| {
                let g = v
                    .tape()
                    .grad(*v)
                    .unwrap_or_else(|| Tensor::zeros(v.shape()));
                (k.clone(), g)
            })
            .collect()
    }
}
