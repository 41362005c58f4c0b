use std::collections::HashMap;

use super::tape::{Tape, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Named trainable tensors in a fixed insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = value,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, value));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (n, t) in self.iter() {
            out.insert(n, t.cast());
        }
        out
    }

    /// Record every parameter as a gradient-carrying leaf.
    pub fn register(&self, tape: &mut Tape<T>) -> ParamVars {
        self.register_with(tape, true)
    }

    /// Record every parameter as a constant (inference).
    pub fn register_frozen(&self, tape: &mut Tape<T>) -> ParamVars {
        self.register_with(tape, false)
    }

    fn register_with(&self, tape: &mut Tape<T>, requires_grad: bool) -> ParamVars {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), requires_grad))
            .collect();
        ParamVars {
            vars,
            index: self.index.clone(),
        }
    }

    /// Name existing tape variables in store order (for example gradcheck leaves).
    pub fn bind(&self, vars: &[Var]) -> ParamVars {
        assert_eq!(vars.len(), self.entries.len(), "one variable per parameter");
        ParamVars {
            vars: vars.to_vec(),
            index: self.index.clone(),
        }
    }

    /// Collect gradients after backward in store order.
    pub fn gradients(&self, tape: &Tape<T>, vars: &ParamVars) -> Result<Vec<Tensor<T>>> {
        vars.vars
            .iter()
            .zip(&self.entries)
            .map(|(&v, (name, _))| {
                tape.grad(v)
                    .cloned()
                    .ok_or_else(|| Error::Contract(format!("no gradient recorded for {name}")))
            })
            .collect()
    }
}

/// Tape handles for a registered [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter {name} is not registered"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
