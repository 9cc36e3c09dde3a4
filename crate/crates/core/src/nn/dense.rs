use rand::Rng;

use super::{Layer, LayerKind, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Affine map over the trailing axis: `y = x·Wᵀ + b` with `W: [d_out, d_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
}

impl<S: Scalar> Dense<S> {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[d_out, d_in], bound, rng),
            bias: Param::zeros(format!("{name}.bias"), &[d_out]),
        }
    }

    pub fn from_weights(name: &str, weight: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        let (d_out, _) = weight.dims2("Dense::from_weights")?;
        bias.expect_shape("Dense::from_weights", &[d_out])?;
        Ok(Self {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: Param::new(format!("{name}.bias"), bias),
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<usize> {
        match x.shape() {
            [n, d] if *d == self.d_in() => Ok(*n),
            other => Err(Error::shape("Dense::forward", other, &[usize::MAX, self.d_in()])),
        }
    }
}

impl<S: Scalar> Layer<S> for Dense<S> {
    type Cache = Tensor<S>;

    fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }

    fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let n = self.check_input(x)?;
        let (d_in, d_out) = (self.d_in(), self.d_out());
        let mut out = Vec::with_capacity(n * d_out);
        for _ in 0..n {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm_nt(x.data(), self.weight.value.data(), &mut out, n, d_in, d_out);
        Ok((Tensor::from_vec(&[n, d_out], out)?, x.clone()))
    }

    fn backward(&self, x: &Tensor<S>, dy: &Tensor<S>, grads: &mut [Tensor<S>]) -> Result<Tensor<S>> {
        let n = self.check_input(x)?;
        let (d_in, d_out) = (self.d_in(), self.d_out());
        dy.expect_shape("Dense::backward", &[n, d_out])?;
        let [gw, gb] = grads else {
            return Err(Error::Config("Dense expects two gradient buffers".into()));
        };
        gemm_tn(dy.data(), x.data(), gw.data_mut(), d_out, n, d_in);
        let gbd = gb.data_mut();
        for row in dy.data().chunks(d_out) {
            for (g, &v) in gbd.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = vec![S::zero(); n * d_in];
        gemm_nn(dy.data(), self.weight.value.data(), &mut dx, n, d_out, d_in);
        Tensor::from_vec(&[n, d_in], dx)
    }

    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_is_identity_map() {
        let d = Dense::<f64>::from_weights("id", Tensor::eye(3), Tensor::zeros(&[3])).unwrap();
        let x = Tensor::from_rows(&[&[1.0, -2.0, 0.5], &[3.0, 0.0, 7.0]]);
        assert_eq!(d.infer(&x).unwrap(), x);
    }

    #[test]
    fn wrong_width_is_a_shape_error() {
        let d = Dense::<f64>::from_weights("id", Tensor::eye(3), Tensor::zeros(&[3])).unwrap();
        let err = d.infer(&Tensor::zeros(&[2, 4])).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }
}
