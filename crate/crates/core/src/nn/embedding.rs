use rand::Rng;

use super::{Layer, LayerKind, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Learned additive position table: `y[t] = x[t] + E[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<S> {
    pub table: Param<S>,
}

impl<S: Scalar> Embedding<S> {
    pub fn new<R: Rng + ?Sized>(name: &str, positions: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            table: Param::uniform(format!("{name}.table"), &[positions, dim], 0.02, rng),
        }
    }
}

impl<S: Scalar> Layer<S> for Embedding<S> {
    type Cache = ();

    fn kind(&self) -> LayerKind {
        LayerKind::Embedding
    }

    fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, ())> {
        x.expect_shape("Embedding::forward", self.table.value.shape())?;
        let mut y = x.clone();
        y.add_assign(&self.table.value)?;
        Ok((y, ()))
    }

    fn backward(&self, _cache: &(), dy: &Tensor<S>, grads: &mut [Tensor<S>]) -> Result<Tensor<S>> {
        dy.expect_shape("Embedding::backward", self.table.value.shape())?;
        let [g] = grads else {
            return Err(Error::Config("Embedding expects one gradient buffer".into()));
        };
        g.add_assign(dy)?;
        Ok(dy.clone())
    }

    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.table]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.table]
    }
}
