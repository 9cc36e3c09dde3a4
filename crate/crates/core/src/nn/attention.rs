use rand::Rng;

use super::{Dense, Layer, LayerKind, Param};
use crate::error::{Error, Result};
use crate::lora::{LoraCache, LoraDense};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let c = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut z = S::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// A q/k/v/o projection: a plain dense map, or one carrying a low-rank
/// adapter.
#[derive(Debug, Clone, PartialEq)]
pub enum Projection<S> {
    Plain(Dense<S>),
    Adapted(LoraDense<S>),
}

#[derive(Debug, Clone)]
pub enum ProjectionCache<S> {
    Plain(Tensor<S>),
    Adapted(LoraCache<S>),
}

impl<S: Scalar> Projection<S> {
    pub fn is_adapted(&self) -> bool {
        matches!(self, Projection::Adapted(_))
    }

    pub fn base(&self) -> &Dense<S> {
        match self {
            Projection::Plain(d) => d,
            Projection::Adapted(l) => &l.base,
        }
    }
}

impl<S: Scalar> Layer<S> for Projection<S> {
    type Cache = ProjectionCache<S>;

    fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }

    fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, ProjectionCache<S>)> {
        match self {
            Projection::Plain(d) => d.forward(x).map(|(y, c)| (y, ProjectionCache::Plain(c))),
            Projection::Adapted(l) => l.forward(x).map(|(y, c)| (y, ProjectionCache::Adapted(c))),
        }
    }

    fn backward(&self, cache: &ProjectionCache<S>, dy: &Tensor<S>, grads: &mut [Tensor<S>]) -> Result<Tensor<S>> {
        match (self, cache) {
            (Projection::Plain(d), ProjectionCache::Plain(c)) => d.backward(c, dy, grads),
            (Projection::Adapted(l), ProjectionCache::Adapted(c)) => l.backward(c, dy, grads),
            _ => Err(Error::Adapter("projection cache does not match projection kind".into())),
        }
    }

    fn params(&self) -> Vec<&Param<S>> {
        match self {
            Projection::Plain(d) => d.params(),
            Projection::Adapted(l) => l.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        match self {
            Projection::Plain(d) => d.params_mut(),
            Projection::Adapted(l) => l.params_mut(),
        }
    }
}

/// Single-head self-attention over the rows (time steps) of a `[T, C]` input:
/// `o = Wo · softmax(q·kᵀ/√C) · v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<S> {
    pub q: Projection<S>,
    pub k: Dense<S>,
    pub v: Projection<S>,
    pub o: Dense<S>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<S> {
    q_cache: ProjectionCache<S>,
    k_cache: Tensor<S>,
    v_cache: ProjectionCache<S>,
    o_cache: Tensor<S>,
    q: Tensor<S>,
    k: Tensor<S>,
    v: Tensor<S>,
    /// Attention probabilities `[T, T]`.
    pub probs: Tensor<S>,
}

impl<S: Scalar> Attention<S> {
    pub fn new<R: Rng + ?Sized>(name: &str, dim: usize, rng: &mut R) -> Self {
        Self {
            q: Projection::Plain(Dense::new(&format!("{name}.q"), dim, dim, rng)),
            k: Dense::new(&format!("{name}.k"), dim, dim, rng),
            v: Projection::Plain(Dense::new(&format!("{name}.v"), dim, dim, rng)),
            o: Dense::new(&format!("{name}.o"), dim, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.k.d_in()
    }

    fn scale(&self) -> S {
        S::one() / S::lit(self.dim() as f64).sqrt()
    }

    /// Parameter counts of (q, k, v, o) in [`Layer::params`] order.
    fn splits(&self) -> [usize; 4] {
        [self.q.params().len(), 2, self.v.params().len(), 2]
    }
}

/// `softmax(q·kᵀ·scale)·v`; returns the context and the probabilities.
pub fn scaled_dot_attention<S: Scalar>(q: &Tensor<S>, k: &Tensor<S>, v: &Tensor<S>, scale: S) -> Result<(Tensor<S>, Tensor<S>)> {
    let mut scores = q.matmul_t(k)?;
    scores.scale(scale);
    let probs = softmax_rows(&scores);
    Ok((probs.matmul(v)?, probs))
}

impl<S: Scalar> Layer<S> for Attention<S> {
    type Cache = AttentionCache<S>;

    fn kind(&self) -> LayerKind {
        LayerKind::Attention
    }

    fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, AttentionCache<S>)> {
        if x.shape().len() != 2 || x.cols() != self.dim() {
            return Err(Error::shape("Attention::forward", x.shape(), &[usize::MAX, self.dim()]));
        }
        let (q, q_cache) = self.q.forward(x)?;
        let (k, k_cache) = self.k.forward(x)?;
        let (v, v_cache) = self.v.forward(x)?;
        let (ctx, probs) = scaled_dot_attention(&q, &k, &v, self.scale())?;
        let (y, o_cache) = self.o.forward(&ctx)?;
        Ok((
            y,
            AttentionCache {
                q_cache,
                k_cache,
                v_cache,
                o_cache,
                q,
                k,
                v,
                probs,
            },
        ))
    }

    fn backward(&self, c: &AttentionCache<S>, dy: &Tensor<S>, grads: &mut [Tensor<S>]) -> Result<Tensor<S>> {
        let [nq, nk, nv, _] = self.splits();
        let (gq, rest) = grads.split_at_mut(nq);
        let (gk, rest) = rest.split_at_mut(nk);
        let (gv, go) = rest.split_at_mut(nv);

        let dctx = self.o.backward(&c.o_cache, dy, go)?;
        // ctx = P·v
        let dprobs = dctx.matmul_t(&c.v)?;
        let dv = c.probs.t_matmul(&dctx)?;
        // softmax backward per row, then the 1/√C scale
        let t = c.probs.rows();
        let mut dscores = Tensor::zeros(&[t, t]);
        let scale = self.scale();
        for i in 0..t {
            let p = c.probs.row(i);
            let dp = dprobs.row(i);
            let dot: S = p.iter().zip(dp).map(|(&a, &b)| a * b).sum();
            for j in 0..t {
                dscores.set2(i, j, p[j] * (dp[j] - dot) * scale);
            }
        }
        let dq = dscores.matmul(&c.k)?;
        let dk = dscores.t_matmul(&c.q)?;

        let mut dx = self.q.backward(&c.q_cache, &dq, gq)?;
        dx.add_assign(&self.k.backward(&c.k_cache, &dk, gk)?)?;
        dx.add_assign(&self.v.backward(&c.v_cache, &dv, gv)?)?;
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<S>> {
        let mut p = self.q.params();
        p.extend(self.k.params());
        p.extend(self.v.params());
        p.extend(self.o.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut p = self.q.params_mut();
        p.extend(self.k.params_mut());
        p.extend(self.v.params_mut());
        p.extend(self.o.params_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_keys_average_the_values() {
        let q = Tensor::<f64>::from_rows(&[&[1.0, 2.0], &[-3.0, 0.5], &[0.0, 4.0]]);
        let k = Tensor::<f64>::from_rows(&[&[0.3, 0.7], &[0.3, 0.7], &[0.3, 0.7]]);
        let v = Tensor::<f64>::from_rows(&[&[1.0, 10.0], &[2.0, 20.0], &[6.0, 60.0]]);
        let (ctx, _) = scaled_dot_attention(&q, &k, &v, 1.0 / 2f64.sqrt()).unwrap();
        for i in 0..3 {
            assert!((ctx.at2(i, 0) - 3.0).abs() < 1e-12);
            assert!((ctx.at2(i, 1) - 30.0).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_are_a_distribution_even_for_large_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let att = Attention::<f64>::new("a", 6, &mut rng);
        let x = Param::<f64>::uniform("x", &[5, 6], 300.0, &mut rng).value;
        let (y, cache) = att.forward(&x).unwrap();
        assert!(y.all_finite());
        for i in 0..5 {
            let row = cache.probs.row(i);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
