//! Central finite-difference verification of analytic gradients.

use super::{Layer, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so that gradients that are
/// zero up to rounding do not dominate the maximum. Central differences at
/// `eps = 1e-5` carry roughly `1e-10` of rounding noise on unit-scale losses,
/// which is what an identically zero gradient (attention key bias, for one)
/// measures as.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// Anything with parameters and a scalar loss of an input tensor.
pub trait Fragment<S: Scalar> {
    fn params(&self) -> Vec<&Param<S>>;

    fn params_mut(&mut self) -> Vec<&mut Param<S>>;

    /// Returns the loss, `dL/dθ` aligned with [`Fragment::params`], and
    /// `dL/dinput`.
    fn evaluate(&self, input: &Tensor<S>) -> Result<(S, Vec<Tensor<S>>, Tensor<S>)>;

    fn loss(&self, input: &Tensor<S>) -> Result<S> {
        self.evaluate(input).map(|(l, _, _)| l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite(format!("loss became {loss} while perturbing {what}")))
    }
}

/// Compares analytic gradients against central differences over every
/// trainable scalar of `fragment`.
pub fn grad_check<F: Fragment<f64>>(fragment: &mut F, input: &Tensor<f64>, eps: f64) -> Result<GradCheckReport> {
    let (base, analytic, _) = fragment.evaluate(input)?;
    finite(base, "nothing")?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
    };
    let count = fragment.params().len();
    for pi in 0..count {
        let (trainable, name, n) = {
            let p = &fragment.params()[pi];
            (p.trainable, p.name.clone(), p.numel())
        };
        if !trainable {
            continue;
        }
        for j in 0..n {
            let orig = fragment.params()[pi].value.data()[j];
            fragment.params_mut()[pi].value.data_mut()[j] = orig + eps;
            let plus = finite(fragment.loss(input)?, &name)?;
            fragment.params_mut()[pi].value.data_mut()[j] = orig - eps;
            let minus = finite(fragment.loss(input)?, &name)?;
            fragment.params_mut()[pi].value.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[pi].data()[j], numeric);
            report.checked += 1;
            if err >= report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((name.clone(), j));
            }
        }
    }
    Ok(report)
}

/// Same comparison for `dL/dinput`.
pub fn grad_check_input<F: Fragment<f64>>(fragment: &F, input: &Tensor<f64>, eps: f64) -> Result<GradCheckReport> {
    let (base, _, analytic) = fragment.evaluate(input)?;
    finite(base, "nothing")?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut x = input.clone();
    for j in 0..x.len() {
        let orig = x.data()[j];
        x.data_mut()[j] = orig + eps;
        let plus = finite(fragment.loss(&x)?, "input")?;
        x.data_mut()[j] = orig - eps;
        let minus = finite(fragment.loss(&x)?, "input")?;
        x.data_mut()[j] = orig;
        let err = relative_error(analytic.data()[j], (plus - minus) / (2.0 * eps));
        report.checked += 1;
        if err >= report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some(("input".into(), j));
        }
    }
    Ok(report)
}

/// Wraps a single layer with the loss `½·Σ(y − target)²`.
#[derive(Debug, Clone)]
pub struct LayerProbe<L, S> {
    pub layer: L,
    pub target: Tensor<S>,
}

impl<S: Scalar, L: Layer<S>> Fragment<S> for LayerProbe<L, S> {
    fn params(&self) -> Vec<&Param<S>> {
        self.layer.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        self.layer.params_mut()
    }

    fn evaluate(&self, input: &Tensor<S>) -> Result<(S, Vec<Tensor<S>>, Tensor<S>)> {
        let (y, cache) = self.layer.forward(input)?;
        y.check_same("LayerProbe", &self.target)?;
        let mut dy = y.clone();
        let mut loss = S::zero();
        for (d, &t) in dy.data_mut().iter_mut().zip(self.target.data()) {
            *d -= t;
            loss += *d * *d;
        }
        loss *= S::lit(0.5);
        let params = self.layer.params();
        let mut grads: Vec<Tensor<S>> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let dx = self.layer.backward(&cache, &dy, &mut grads)?;
        Ok((loss, grads, dx))
    }
}
