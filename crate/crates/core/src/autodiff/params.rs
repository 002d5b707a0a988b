use std::collections::HashMap;
use std::ops::Index;
use std::sync::Arc;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable (or frozen) tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Arc<Tensor>,
    grad: Tensor,
    trainable: bool,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

/// Owns every parameter of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

/// Tape variables for every parameter of a store, valid for one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            grad: Tensor::zeros(value.shape()),
            value: Arc::new(value),
            trainable,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Records every parameter on `tape` as a leaf; frozen parameters do not
    /// require gradients.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf_shared(Arc::clone(&p.value), p.trainable))
            .collect();
        Bound { vars }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds the tape gradients of every trainable parameter to its stored gradient.
    pub fn accumulate_grads(&mut self, bound: &Bound, grads: &Gradients) {
        for (p, &var) in self.params.iter_mut().zip(&bound.vars) {
            if !p.trainable {
                continue;
            }
            if let Some(g) = grads.get(var) {
                p.grad.add_assign(g);
            }
        }
    }

    /// Global L2 norm over the gradients of trainable parameters.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn scale_grads(&mut self, factor: f64) {
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }
}

impl Parameter {
    pub(crate) fn split_mut(&mut self) -> (&mut Tensor, &Tensor) {
        (Arc::make_mut(&mut self.value), &self.grad)
    }
}
