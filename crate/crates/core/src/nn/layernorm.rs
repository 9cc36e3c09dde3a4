use super::{Layer, LayerKind, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Normalizes each row over the trailing axis, then applies `γ·x̂ + β`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<S> {
    pub gamma: Param<S>,
    pub beta: Param<S>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<S> {
    xhat: Tensor<S>,
    inv_std: Vec<S>,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::filled(&[dim], S::one())),
            beta: Param::zeros(format!("{name}.beta"), &[dim]),
        }
    }

    fn dim(&self) -> usize {
        self.gamma.value.len()
    }
}

impl<S: Scalar> Layer<S> for LayerNorm<S> {
    type Cache = LayerNormCache<S>;

    fn kind(&self) -> LayerKind {
        LayerKind::LayerNorm
    }

    fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, LayerNormCache<S>)> {
        let d = self.dim();
        if x.cols() != d || x.shape().len() != 2 {
            return Err(Error::shape("LayerNorm::forward", x.shape(), &[usize::MAX, d]));
        }
        let n = x.rows();
        let eps = S::lit(LAYERNORM_EPS);
        let inv_d = S::lit(1.0 / d as f64);
        let mut xhat = Tensor::zeros(&[n, d]);
        let mut y = Tensor::zeros(&[n, d]);
        let mut inv_std = Vec::with_capacity(n);
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for r in 0..n {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<S>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
            let is = S::one() / (var + eps).sqrt();
            inv_std.push(is);
            let xh = &mut xhat.data_mut()[r * d..(r + 1) * d];
            for (o, &v) in xh.iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            let yr = &mut y.data_mut()[r * d..(r + 1) * d];
            for j in 0..d {
                yr[j] = xhat.data()[r * d + j] * g[j] + b[j];
            }
        }
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    fn backward(&self, cache: &LayerNormCache<S>, dy: &Tensor<S>, grads: &mut [Tensor<S>]) -> Result<Tensor<S>> {
        dy.check_same("LayerNorm::backward", &cache.xhat)?;
        let [gg, gb] = grads else {
            return Err(Error::Config("LayerNorm expects two gradient buffers".into()));
        };
        let d = self.dim();
        let n = dy.rows();
        let g = self.gamma.value.data();
        let inv_d = S::lit(1.0 / d as f64);
        let mut dx = Tensor::zeros(&[n, d]);
        let mut dxhat = vec![S::zero(); d];
        for r in 0..n {
            let dyr = dy.row(r);
            let xh = cache.xhat.row(r);
            for j in 0..d {
                gg.data_mut()[j] += dyr[j] * xh[j];
                gb.data_mut()[j] += dyr[j];
                dxhat[j] = dyr[j] * g[j];
            }
            let sum_d: S = dxhat.iter().copied().sum();
            let sum_dx: S = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            let is = cache.inv_std[r];
            let out = &mut dx.data_mut()[r * d..(r + 1) * d];
            for j in 0..d {
                out[j] = is * (dxhat[j] - sum_d * inv_d - xh[j] * sum_dx * inv_d);
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_row_normalizes_to_zero() {
        let ln = LayerNorm::<f64>::new("ln", 4);
        let y = ln.infer(&Tensor::filled(&[2, 4], 3.5)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rows_have_zero_mean_unit_variance() {
        let ln = LayerNorm::<f64>::new("ln", 3);
        let y = ln.infer(&Tensor::from_rows(&[&[1.0, 2.0, 6.0]])).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 3.0;
        let var: f64 = y.data().iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
    }
}
