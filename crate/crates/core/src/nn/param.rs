use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A named learnable tensor with a trainable flag.
///
/// Gradients live in a parallel buffer (see [`Grads`]) so a shared model can
/// be differentiated on several inputs without cloning parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub trainable: bool,
}

impl<S: Scalar> Param<S> {
    pub fn new(name: impl Into<String>, value: Tensor<S>) -> Self {
        Self {
            name: name.into(),
            value,
            trainable: true,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| S::lit(rng.random_range(-bound..=bound)))
            .collect();
        Self::new(name, Tensor::from_vec(shape, data).expect("sized"))
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }
}

/// Gradient buffers aligned index-by-index with a parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<S> {
    pub tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Grads<S> {
    pub fn zeros_like(params: &[&Param<S>]) -> Self {
        Self {
            tensors: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(S::zero());
        }
    }

    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b).expect("aligned grads");
        }
    }

    pub fn scale(&mut self, k: S) {
        for t in &mut self.tensors {
            t.scale(k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}
