use std::ops::Index;

use super::{Element, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named buffer. Non-trainable entries hold running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<E> {
    pub name: String,
    pub value: Tensor<E>,
    pub trainable: bool,
}

/// Declaration-ordered parameter storage shared by all layers of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<E> {
    params: Vec<Param<E>>,
}

/// Tape handles for every entry of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bindings(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bindings {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>, trainable: bool) -> ParamId {
        self.params.push(Param { name: name.into(), value, trainable });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<E> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<E> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<E>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<E>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_len(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Records every entry as a leaf; trainable entries require gradients.
    pub fn bind(&self, tape: &mut Tape<E>) -> Bindings {
        Bindings(self.params.iter().map(|p| tape.leaf(p.value.clone(), p.trainable)).collect())
    }

    /// Gradients after `tape.backward`, one slot per entry (`None` for
    /// buffers and for parameters the loss did not reach).
    pub fn take_grads(&self, tape: &mut Tape<E>, bindings: &Bindings) -> Vec<Option<Vec<E>>> {
        bindings.0.iter().zip(&self.params).map(|(&v, p)| if p.trainable { tape.take_grad(v) } else { None }).collect()
    }
}
