use super::Tensor;
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One trainable tensor with its gradient and Adam moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub(crate) m: Tensor,
    pub(crate) v: Tensor,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Param {
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        }
    }
}

/// Named parameter tensors in registration order.
///
/// Plain data: cloning yields an independent snapshot, e.g. for a target network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(self.id(name).is_none(), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.params.push(Param::new(value));
        ParamId(self.params.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn require(&self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Snapshot(format!("missing parameter {name}")))?;
        if self.value(id).shape() != shape {
            return Err(Error::shape(format!(
                "parameter {name}: expected {shape:?}, found {:?}",
                self.value(id).shape()
            )));
        }
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill(0.0));
    }

    /// True when every parameter value is bit-identical to `other`'s.
    pub fn values_equal(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| {
                    a.value.shape() == b.value.shape()
                        && a.value
                            .data()
                            .iter()
                            .zip(b.value.data())
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                })
    }

    /// Simultaneous read access to all values and write access to all gradients.
    pub fn split(&mut self) -> (Values<'_>, Grads<'_>) {
        let (v, g) = self.params.iter_mut().map(|p| (&p.value, &mut p.grad)).unzip();
        (Values(v), Grads(g))
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

/// Borrowed parameter values, indexed by [`ParamId`].
pub struct Values<'a>(Vec<&'a Tensor>);

impl<'a> Values<'a> {
    pub fn get(&self, id: ParamId) -> &'a Tensor {
        self.0[id.0]
    }
}

/// Borrowed gradient slots, indexed by [`ParamId`].
pub struct Grads<'a>(Vec<&'a mut Tensor>);

impl Grads<'_> {
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.0[id.0]
    }
}
