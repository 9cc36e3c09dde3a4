use super::{Layer, LayerKind, Param};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Tanh,
    Sigmoid,
}

/// Elementwise nonlinearity. The cache is the output, which is all both
/// derivatives need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Activation(pub ActivationKind);

impl<S: Scalar> Layer<S> for Activation {
    type Cache = Tensor<S>;

    fn kind(&self) -> LayerKind {
        LayerKind::Activation
    }

    fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let y = match self.0 {
            ActivationKind::Tanh => x.map(|v| v.tanh()),
            ActivationKind::Sigmoid => x.map(|v| S::one() / (S::one() + (-v).exp())),
        };
        Ok((y.clone(), y))
    }

    fn backward(&self, y: &Tensor<S>, dy: &Tensor<S>, _grads: &mut [Tensor<S>]) -> Result<Tensor<S>> {
        y.check_same("Activation::backward", dy)?;
        let mut dx = dy.clone();
        for (d, &o) in dx.data_mut().iter_mut().zip(y.data()) {
            *d *= match self.0 {
                ActivationKind::Tanh => S::one() - o * o,
                ActivationKind::Sigmoid => o * (S::one() - o),
            };
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<S>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        Vec::new()
    }
}
