//! Phase-conditioned memory bank.
//!
//! Encoder features `F_in: [T, C]` address a bank of `M` learned slots
//! `M̂: [M, C]`. The slot column selected by the predicted cycle phase is
//! boosted by `1 + P_s[t_p]` before the weights are normalized and used to
//! read features back out:
//!
//! ```text
//! w   = F_in · M̂ᵀ                     [T, M]
//! t'  = floor(t_p · M / t_max)
//! w'  = w, column t' scaled by 1 + P_s[t_p]
//! ŵ   = softmax of each column of w' over the T rows   (Column mode)
//!       softmax of each row of w' over the M slots      (Row mode)
//! out = ŵ · M̂                          [T, C]
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxAxis {
    /// Normalize every slot column over time steps.
    #[default]
    Column,
    /// Normalize every time row over slots.
    Row,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicMemoryBank<S> {
    /// `[M, C]`
    pub items: Param<S>,
    pub t_max: usize,
    pub axis: SoftmaxAxis,
}

/// Everything the backward pass needs, plus the intermediate weights for
/// inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct AddressingTrace<S> {
    pub input: Tensor<S>,
    /// `w`
    pub raw: Tensor<S>,
    /// `w'`
    pub boosted: Tensor<S>,
    /// `ŵ`
    pub weights: Tensor<S>,
    /// `t_p`
    pub phase: usize,
    /// `t'_p`
    pub slot: usize,
    pub boost_factor: S,
}

impl<S: Scalar> PeriodicMemoryBank<S> {
    pub fn new<R: Rng + ?Sized>(slots: usize, channels: usize, t_max: usize, axis: SoftmaxAxis, rng: &mut R) -> Result<Self> {
        if slots == 0 || channels == 0 {
            return Err(Error::Config(format!("memory needs M ≥ 1 and C ≥ 1, got M={slots}, C={channels}")));
        }
        if t_max < 2 {
            return Err(Error::Config(format!("t_max must be at least 2, got {t_max}")));
        }
        let bound = 1.0 / (channels as f64).sqrt();
        Ok(Self {
            items: Param::uniform("memory.items", &[slots, channels], bound, rng),
            t_max,
            axis,
        })
    }

    pub fn from_items(items: Tensor<S>, t_max: usize, axis: SoftmaxAxis) -> Result<Self> {
        let (m, c) = items.dims2("PeriodicMemoryBank::from_items")?;
        if m == 0 || c == 0 || t_max < 2 {
            return Err(Error::Config(format!("invalid bank: M={m}, C={c}, t_max={t_max}")));
        }
        Ok(Self {
            items: Param::new("memory.items", items),
            t_max,
            axis,
        })
    }

    pub fn slots(&self) -> usize {
        self.items.value.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.items.value.shape()[1]
    }
}

/// `w = F_in · M̂ᵀ`
pub fn address<S: Scalar>(input: &Tensor<S>, bank: &PeriodicMemoryBank<S>) -> Result<Tensor<S>> {
    if input.shape().len() != 2 || input.cols() != bank.channels() {
        return Err(Error::shape("memory::address", input.shape(), bank.items.value.shape()));
    }
    input.matmul_t(&bank.items.value)
}

/// `t'_p = floor(t_p · M / t_max)`
pub fn map_phase(phase: usize, t_max: usize, slots: usize) -> Result<usize> {
    if phase >= t_max {
        return Err(Error::OutOfRange {
            op: "memory::map_phase",
            index: phase,
            limit: t_max,
        });
    }
    Ok(((phase as u128 * slots as u128) / t_max as u128) as usize)
}

/// Scales column `slot` of `w` by `factor`; every other entry is copied.
pub fn boost<S: Scalar>(w: &Tensor<S>, slot: usize, factor: S) -> Result<Tensor<S>> {
    let (_, m) = w.dims2("memory::boost")?;
    if slot >= m {
        return Err(Error::OutOfRange {
            op: "memory::boost",
            index: slot,
            limit: m,
        });
    }
    if !(factor.is_finite() && factor >= S::one()) {
        return Err(Error::Config(format!("boost factor must be finite and ≥ 1, got {factor}")));
    }
    let mut out = w.clone();
    for row in out.data_mut().chunks_mut(m) {
        row[slot] *= factor;
    }
    Ok(out)
}

/// Softmax of `w'` along `axis` (column mode normalizes over time rows).
pub fn normalize<S: Scalar>(w: &Tensor<S>, axis: SoftmaxAxis) -> Tensor<S> {
    match axis {
        SoftmaxAxis::Row => crate::nn::softmax_rows(w),
        SoftmaxAxis::Column => {
            let (t, m) = (w.rows(), w.cols());
            let mut out = w.clone();
            let d = out.data_mut();
            for j in 0..m {
                let mut mx = S::neg_infinity();
                for i in 0..t {
                    mx = mx.max(d[i * m + j]);
                }
                let mut z = S::zero();
                for i in 0..t {
                    let e = (d[i * m + j] - mx).exp();
                    d[i * m + j] = e;
                    z += e;
                }
                for i in 0..t {
                    d[i * m + j] /= z;
                }
            }
            out
        }
    }
}

/// `out = ŵ · M̂`
pub fn retrieve<S: Scalar>(weights: &Tensor<S>, bank: &PeriodicMemoryBank<S>) -> Result<Tensor<S>> {
    if weights.shape().len() != 2 || weights.cols() != bank.slots() {
        return Err(Error::shape("memory::retrieve", weights.shape(), bank.items.value.shape()));
    }
    weights.matmul(&bank.items.value)
}

/// Full addressing pipeline. `scores` is the phase distribution `P_s`; the
/// boost is `1 + P_s[phase]`.
pub fn memory_forward<S: Scalar>(
    input: &Tensor<S>,
    bank: &PeriodicMemoryBank<S>,
    phase: usize,
    scores: &[S],
) -> Result<(Tensor<S>, AddressingTrace<S>)> {
    if scores.len() != bank.t_max {
        return Err(Error::shape("memory_forward", &[scores.len()], &[bank.t_max]));
    }
    let raw = address(input, bank)?;
    let slot = map_phase(phase, bank.t_max, bank.slots())?;
    let boost_factor = S::one() + scores[phase];
    let boosted = boost(&raw, slot, boost_factor)?;
    let weights = normalize(&boosted, bank.axis);
    let out = retrieve(&weights, bank)?;
    Ok((
        out,
        AddressingTrace {
            input: input.clone(),
            raw,
            boosted,
            weights,
            phase,
            slot,
            boost_factor,
        },
    ))
}

/// Exact gradients of [`memory_forward`] with the phase and boost factor held
/// constant. Returns `(dF_in, dM̂)`.
pub fn memory_backward<S: Scalar>(
    trace: &AddressingTrace<S>,
    bank: &PeriodicMemoryBank<S>,
    d_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let items = &bank.items.value;
    let (t, m) = trace.weights.dims2("memory_backward")?;
    d_out.expect_shape("memory_backward", &[t, bank.channels()])?;

    // out = ŵ·M̂
    let d_weights = d_out.matmul_t(items)?;
    let mut d_items = trace.weights.t_matmul(d_out)?;

    let y = &trace.weights;
    let mut d_boosted = Tensor::zeros(&[t, m]);
    match bank.axis {
        SoftmaxAxis::Column => {
            for j in 0..m {
                let mut dot = S::zero();
                for i in 0..t {
                    dot += y.at2(i, j) * d_weights.at2(i, j);
                }
                for i in 0..t {
                    d_boosted.set2(i, j, y.at2(i, j) * (d_weights.at2(i, j) - dot));
                }
            }
        }
        SoftmaxAxis::Row => {
            for i in 0..t {
                let dot: S = y.row(i).iter().zip(d_weights.row(i)).map(|(&a, &b)| a * b).sum();
                for j in 0..m {
                    d_boosted.set2(i, j, y.at2(i, j) * (d_weights.at2(i, j) - dot));
                }
            }
        }
    }
    // w' = w with one column scaled
    let mut d_raw = d_boosted;
    for row in d_raw.data_mut().chunks_mut(m) {
        row[trace.slot] *= trace.boost_factor;
    }
    // w = F_in·M̂ᵀ
    let d_input = d_raw.matmul(items)?;
    d_items.add_assign(&d_raw.t_matmul(&trace.input)?)?;
    Ok((d_input, d_items))
}
