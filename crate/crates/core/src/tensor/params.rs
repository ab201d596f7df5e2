//! Named parameter store.
//!
//! Holds every learnable tensor and persistent buffer (batchnorm running
//! stats) of a model, addressed by stable insertion-order ids. The tape
//! leases parameter values in by id and accumulates gradients back out.

use super::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    pub grad: Vec<S>,
    pub trainable: bool,
}

impl<S: Scalar> Param<S> {
    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    fn add(&mut self, name: &str, shape: Vec<usize>, value: Vec<S>, trainable: bool) -> ParamId {
        assert_eq!(
            shape.iter().product::<usize>(),
            value.len(),
            "parameter {name}: shape/data mismatch"
        );
        assert!(
            !self.params.iter().any(|p| p.name == name),
            "duplicate parameter name {name}"
        );
        let n = value.len();
        self.params.push(Param {
            name: name.to_string(),
            shape,
            value,
            grad: vec![S::zero(); n],
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_trainable(&mut self, name: &str, shape: Vec<usize>, value: Vec<S>) -> ParamId {
        self.add(name, shape, value, true)
    }

    /// Non-trainable persistent buffer (e.g. a running statistic).
    pub fn add_buffer(&mut self, name: &str, shape: Vec<usize>, value: Vec<S>) -> ParamId {
        self.add(name, shape, value, false)
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[S] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [S] {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[S] {
        &self.params[id.0].grad
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &[S]) {
        let g = &mut self.params[id.0].grad;
        assert_eq!(g.len(), delta.len());
        for (a, d) in g.iter_mut().zip(delta) {
            *a += *d;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total scalar count over trainable parameters only.
    pub fn trainable_param_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.numel()).sum()
    }

    /// Replace a parameter's value, checking length.
    pub fn load_value(&mut self, id: ParamId, value: Vec<S>) -> Result<()> {
        let p = &mut self.params[id.0];
        if value.len() != p.value.len() {
            return Err(Error::shape("ParamStore::load_value", p.value.len(), value.len()));
        }
        p.value = value;
        Ok(())
    }
}
