use rand::Rng;

use super::{Layer, LayerKind, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
}

impl Geometry {
    fn out_hw(&self) -> (usize, usize) {
        ((self.h - self.k) / self.stride + 1, (self.w - self.k) / self.stride + 1)
    }

    fn patch_len(&self) -> usize {
        self.channels * self.k * self.k
    }
}

/// Gathers valid-padding patches of one `[C, H, W]` image into rows of
/// `cols: [Ho·Wo, C·k·k]`.
fn im2col<S: Scalar>(img: &[S], g: Geometry, cols: &mut [S]) {
    let (ho, wo) = g.out_hw();
    let pl = g.patch_len();
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut cols[(oy * wo + ox) * pl..(oy * wo + ox + 1) * pl];
            let mut idx = 0;
            for c in 0..g.channels {
                for ky in 0..g.k {
                    let src = c * g.h * g.w + (oy * g.stride + ky) * g.w + ox * g.stride;
                    row[idx..idx + g.k].copy_from_slice(&img[src..src + g.k]);
                    idx += g.k;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back into the image.
fn col2im<S: Scalar>(cols: &[S], g: Geometry, img: &mut [S]) {
    let (ho, wo) = g.out_hw();
    let pl = g.patch_len();
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &cols[(oy * wo + ox) * pl..(oy * wo + ox + 1) * pl];
            let mut idx = 0;
            for c in 0..g.channels {
                for ky in 0..g.k {
                    let dst = c * g.h * g.w + (oy * g.stride + ky) * g.w + ox * g.stride;
                    for (d, &v) in img[dst..dst + g.k].iter_mut().zip(&row[idx..idx + g.k]) {
                        *d += v;
                    }
                    idx += g.k;
                }
            }
        }
    }
}

fn dims4(op: &'static str, x: &Tensor<impl Scalar>, channels: usize) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [n, c, h, w] if *c == channels => Ok((*n, *h, *w)),
        other => Err(Error::shape(op, other, &[usize::MAX, channels, usize::MAX, usize::MAX])),
    }
}

/// Strided 2-D convolution with valid padding over `[N, C_in, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S> {
    /// `[C_out, C_in, k, k]`
    pub weight: Param<S>,
    pub bias: Param<S>,
    pub stride: usize,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new<R: Rng + ?Sized>(name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = c_in * k * k;
        let bound = (3.0 / fan_in as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[c_out, c_in, k, k], bound, rng),
            bias: Param::zeros(format!("{name}.bias"), &[c_out]),
            stride,
        }
    }

    fn c_out(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn c_in(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn k(&self) -> usize {
        self.weight.value.shape()[2]
    }

    fn geometry(&self, x: &Tensor<S>) -> Result<(usize, Geometry)> {
        let (n, h, w) = dims4("Conv2d::forward", x, self.c_in())?;
        if h < self.k() || w < self.k() {
            return Err(Error::shape("Conv2d::forward", x.shape(), &[n, self.c_in(), self.k(), self.k()]));
        }
        Ok((
            n,
            Geometry {
                channels: self.c_in(),
                h,
                w,
                k: self.k(),
                stride: self.stride,
            },
        ))
    }
}

impl<S: Scalar> Layer<S> for Conv2d<S> {
    /// Input tensor; patches are regathered in backward.
    type Cache = Tensor<S>;

    fn kind(&self) -> LayerKind {
        LayerKind::Conv2d
    }

    fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let (n, g) = self.geometry(x)?;
        let (ho, wo) = g.out_hw();
        let (pl, np, co) = (g.patch_len(), ho * wo, self.c_out());
        let in_sz = g.channels * g.h * g.w;
        let mut cols = vec![S::zero(); np * pl];
        let mut tmp = vec![S::zero(); np * co];
        let mut out = vec![S::zero(); n * co * np];
        for b in 0..n {
            im2col(&x.data()[b * in_sz..(b + 1) * in_sz], g, &mut cols);
            tmp.iter_mut().for_each(|v| *v = S::zero());
            gemm_nt(&cols, self.weight.value.data(), &mut tmp, np, pl, co);
            let ob = &mut out[b * co * np..(b + 1) * co * np];
            for p in 0..np {
                for c in 0..co {
                    ob[c * np + p] = tmp[p * co + c] + self.bias.value.data()[c];
                }
            }
        }
        Ok((Tensor::from_vec(&[n, co, ho, wo], out)?, x.clone()))
    }

    fn backward(&self, x: &Tensor<S>, dy: &Tensor<S>, grads: &mut [Tensor<S>]) -> Result<Tensor<S>> {
        let (n, g) = self.geometry(x)?;
        let (ho, wo) = g.out_hw();
        let (pl, np, co) = (g.patch_len(), ho * wo, self.c_out());
        dy.expect_shape("Conv2d::backward", &[n, co, ho, wo])?;
        let [gw, gb] = grads else {
            return Err(Error::Config("Conv2d expects two gradient buffers".into()));
        };
        let in_sz = g.channels * g.h * g.w;
        let mut cols = vec![S::zero(); np * pl];
        let mut dcols = vec![S::zero(); np * pl];
        let mut dy_t = vec![S::zero(); np * co];
        let mut dx = vec![S::zero(); x.len()];
        for b in 0..n {
            let dyb = &dy.data()[b * co * np..(b + 1) * co * np];
            for c in 0..co {
                let mut acc = S::zero();
                for p in 0..np {
                    let v = dyb[c * np + p];
                    dy_t[p * co + c] = v;
                    acc += v;
                }
                gb.data_mut()[c] += acc;
            }
            im2col(&x.data()[b * in_sz..(b + 1) * in_sz], g, &mut cols);
            // dW[co, pl] += dy_tᵀ · cols
            gemm_tn(&dy_t, &cols, gw.data_mut(), co, np, pl);
            dcols.iter_mut().for_each(|v| *v = S::zero());
            gemm_nn(&dy_t, self.weight.value.data(), &mut dcols, np, co, pl);
            col2im(&dcols, g, &mut dx[b * in_sz..(b + 1) * in_sz]);
        }
        Tensor::from_vec(x.shape(), dx)
    }

    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Transposed convolution (the adjoint of a valid strided convolution) over
/// `[N, C_in, H, W]`, producing `[N, C_out, (H-1)·s + k, (W-1)·s + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<S> {
    /// `[C_in, C_out, k, k]`
    pub weight: Param<S>,
    pub bias: Param<S>,
    pub stride: usize,
}

impl<S: Scalar> ConvTranspose2d<S> {
    pub fn new<R: Rng + ?Sized>(name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = c_in * k * k / (stride * stride).max(1);
        let bound = (3.0 / fan_in.max(1) as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[c_in, c_out, k, k], bound, rng),
            bias: Param::zeros(format!("{name}.bias"), &[c_out]),
            stride,
        }
    }

    fn c_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn c_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn k(&self) -> usize {
        self.weight.value.shape()[2]
    }

    /// Geometry of the *output* image seen as the input of the adjoint conv.
    fn geometry(&self, x: &Tensor<S>) -> Result<(usize, usize, usize, Geometry)> {
        let (n, h, w) = dims4("ConvTranspose2d::forward", x, self.c_in())?;
        let g = Geometry {
            channels: self.c_out(),
            h: (h - 1) * self.stride + self.k(),
            w: (w - 1) * self.stride + self.k(),
            k: self.k(),
            stride: self.stride,
        };
        Ok((n, h, w, g))
    }
}

impl<S: Scalar> Layer<S> for ConvTranspose2d<S> {
    type Cache = Tensor<S>;

    fn kind(&self) -> LayerKind {
        LayerKind::ConvTranspose2d
    }

    fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let (n, h, w, g) = self.geometry(x)?;
        let (ci, co, np, pl) = (self.c_in(), self.c_out(), h * w, g.patch_len());
        let out_sz = co * g.h * g.w;
        let mut x_t = vec![S::zero(); np * ci];
        let mut cols = vec![S::zero(); np * pl];
        let mut out = vec![S::zero(); n * out_sz];
        for b in 0..n {
            let xb = &x.data()[b * ci * np..(b + 1) * ci * np];
            for c in 0..ci {
                for p in 0..np {
                    x_t[p * ci + c] = xb[c * np + p];
                }
            }
            cols.iter_mut().for_each(|v| *v = S::zero());
            gemm_nn(&x_t, self.weight.value.data(), &mut cols, np, ci, pl);
            let ob = &mut out[b * out_sz..(b + 1) * out_sz];
            col2im(&cols, g, ob);
            for c in 0..co {
                let bias = self.bias.value.data()[c];
                for v in &mut ob[c * g.h * g.w..(c + 1) * g.h * g.w] {
                    *v += bias;
                }
            }
        }
        Ok((Tensor::from_vec(&[n, co, g.h, g.w], out)?, x.clone()))
    }

    fn backward(&self, x: &Tensor<S>, dy: &Tensor<S>, grads: &mut [Tensor<S>]) -> Result<Tensor<S>> {
        let (n, h, w, g) = self.geometry(x)?;
        let (ci, co, np, pl) = (self.c_in(), self.c_out(), h * w, g.patch_len());
        dy.expect_shape("ConvTranspose2d::backward", &[n, co, g.h, g.w])?;
        let [gw, gb] = grads else {
            return Err(Error::Config("ConvTranspose2d expects two gradient buffers".into()));
        };
        let out_sz = co * g.h * g.w;
        let mut x_t = vec![S::zero(); np * ci];
        let mut dcols = vec![S::zero(); np * pl];
        let mut dx_t = vec![S::zero(); np * ci];
        let mut dx = vec![S::zero(); x.len()];
        for b in 0..n {
            let dyb = &dy.data()[b * out_sz..(b + 1) * out_sz];
            for c in 0..co {
                gb.data_mut()[c] += dyb[c * g.h * g.w..(c + 1) * g.h * g.w].iter().copied().sum::<S>();
            }
            im2col(dyb, g, &mut dcols);
            let xb = &x.data()[b * ci * np..(b + 1) * ci * np];
            for c in 0..ci {
                for p in 0..np {
                    x_t[p * ci + c] = xb[c * np + p];
                }
            }
            gemm_tn(&x_t, &dcols, gw.data_mut(), ci, np, pl);
            dx_t.iter_mut().for_each(|v| *v = S::zero());
            gemm_nt(&dcols, self.weight.value.data(), &mut dx_t, np, pl, ci);
            let dxb = &mut dx[b * ci * np..(b + 1) * ci * np];
            for c in 0..ci {
                for p in 0..np {
                    dxb[c * np + p] = dx_t[p * ci + c];
                }
            }
        }
        Tensor::from_vec(x.shape(), dx)
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
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct-summation oracle for the convolution.
    fn conv_naive(x: &Tensor<f64>, conv: &Conv2d<f64>) -> Vec<f64> {
        let [n, ci, h, w] = x.shape().try_into().unwrap();
        let (co, k, s) = (conv.c_out(), conv.k(), conv.stride);
        let (ho, wo) = ((h - k) / s + 1, (w - k) / s + 1);
        let wt = conv.weight.value.data();
        let mut out = Vec::new();
        for b in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.value.data()[o];
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    acc += wt[((o * ci + c) * k + ky) * k + kx]
                                        * x.data()[((b * ci + c) * h + oy * s + ky) * w + ox * s + kx];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::<f64>::new("c", 2, 3, 3, 2, &mut rng);
        conv.bias.value.data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
        let x = Param::<f64>::uniform("x", &[2, 2, 7, 9], 1.0, &mut rng).value;
        let (y, _) = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3, 4]);
        for (a, b) in y.data().iter().zip(conv_naive(&x, &conv)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with shared weights and zero bias.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let conv = Conv2d::<f64>::new("c", 2, 3, 4, 4, &mut rng);
        let mut tconv = ConvTranspose2d::<f64>::new("t", 3, 2, 4, 4, &mut rng);
        // conv weight [co, ci, k, k] == tconv weight [ci', co', k, k] with ci'=co.
        tconv.weight.value = conv.weight.value.clone();
        let x = Param::<f64>::uniform("x", &[1, 2, 8, 8], 1.0, &mut rng).value;
        let y = Param::<f64>::uniform("y", &[1, 3, 2, 2], 1.0, &mut rng).value;
        let cx = conv.infer(&x).unwrap();
        let ty = tconv.infer(&y).unwrap();
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::<f32>::new("c", 2, 3, 4, 4, &mut rng);
        assert!(conv.infer(&Tensor::zeros(&[1, 1, 8, 8])).is_err());
    }
}
