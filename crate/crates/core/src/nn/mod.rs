//! Differentiable building blocks with explicit forward/backward contracts,
//! the Adam optimizer, a finite-difference gradient checker, and the binary
//! checkpoint format.

mod activation;
mod adam;
mod attention;
pub mod checkpoint;
mod conv;
mod dense;
mod embedding;
mod gradcheck;
mod layernorm;
mod param;

pub use activation::{Activation, ActivationKind};
pub use adam::{Adam, AdamConfig};
pub(crate) use attention::softmax_in_place;
pub use attention::{scaled_dot_attention, softmax_rows, Attention, AttentionCache, Projection, ProjectionCache};
pub use conv::{Conv2d, ConvTranspose2d};
pub use dense::Dense;
pub use embedding::Embedding;
pub use gradcheck::{grad_check, grad_check_input, relative_error, Fragment, GradCheckReport, LayerProbe, REL_ERR_FLOOR};
pub use layernorm::{LayerNorm, LayerNormCache, LAYERNORM_EPS};
pub use param::{Grads, Param};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    Conv2d,
    ConvTranspose2d,
    Attention,
    LayerNorm,
    Embedding,
    Activation,
}

/// A layer with an explicit forward pass that returns whatever the backward
/// pass needs, so a single immutable layer can serve many inputs.
pub trait Layer<S: Scalar> {
    type Cache;

    fn kind(&self) -> LayerKind;

    fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Self::Cache)>;

    /// Returns `dL/dx` and accumulates `dL/dθ` into `grads`, which is aligned
    /// with [`Layer::params`].
    fn backward(&self, cache: &Self::Cache, dy: &Tensor<S>, grads: &mut [Tensor<S>]) -> Result<Tensor<S>>;

    fn params(&self) -> Vec<&Param<S>>;

    fn params_mut(&mut self) -> Vec<&mut Param<S>>;

    /// Forward without keeping the cache.
    fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward(x).map(|(y, _)| y)
    }
}
