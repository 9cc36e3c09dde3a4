//! Reconstruction model: per-frame conv stack, temporal patch projection and
//! one transformer block as encoder, a phase classifier on the pooled
//! features, the periodic memory, and a transposed-conv decoder.
//!
//! Clips are `[T, Ch, H, W]` tensors with intensities in `[0, 1]`.

mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use train::{
    clip_at, dataset_tensor, label_of_clip, train, train_on_frames, EpochLog, TrainConfig, TrainLog, CHECKPOINT_FILE,
    STREAM_INIT, STREAM_SAMPLING, TRAIN_LOG_FILE,
};

use crate::error::{Error, Result};
use crate::memory::{memory_backward, memory_forward, AddressingTrace, PeriodicMemoryBank, SoftmaxAxis};
use crate::nn::{
    Activation, ActivationKind, Attention, AttentionCache, Conv2d, ConvTranspose2d, Dense, Embedding, Layer,
    LayerNorm, LayerNormCache, Param, Projection,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Frames merged into one encoder time step.
pub const TEMPORAL_DOWNSAMPLE: usize = 2;
/// Spatial reduction of the conv stack (two stride-4 convolutions).
pub const SPATIAL_DOWNSAMPLE: usize = 16;

const TANH: Activation = Activation(ActivationKind::Tanh);
const SIGMOID: Activation = Activation(ActivationKind::Sigmoid);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub clip_len: usize,
    pub frame_size: usize,
    pub in_channels: usize,
    /// Feature maps in the conv stacks.
    pub conv_channels: usize,
    /// `C`
    pub dim: usize,
    /// `M`
    pub slots: usize,
    pub t_max: usize,
    pub softmax_axis: SoftmaxAxis,
    /// When false the memory is bypassed and the decoder sees `F` directly.
    pub use_memory: bool,
    /// Stretch every input frame to the full `[0, 1]` range before encoding.
    pub contrast_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            clip_len: 16,
            frame_size: 64,
            in_channels: 1,
            conv_channels: 8,
            dim: 64,
            slots: 200,
            t_max: 20,
            softmax_axis: SoftmaxAxis::Column,
            use_memory: true,
            contrast_norm: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.clip_len < TEMPORAL_DOWNSAMPLE || self.clip_len % TEMPORAL_DOWNSAMPLE != 0 {
            return bad(format!("clip_len must be a positive multiple of {TEMPORAL_DOWNSAMPLE}, got {}", self.clip_len));
        }
        if self.frame_size == 0 || self.frame_size % SPATIAL_DOWNSAMPLE != 0 {
            return bad(format!("frame_size must be a positive multiple of {SPATIAL_DOWNSAMPLE}, got {}", self.frame_size));
        }
        if self.in_channels == 0 || self.conv_channels == 0 || self.dim == 0 || self.slots == 0 {
            return bad("channel and slot counts must be positive".into());
        }
        if self.t_max < 2 {
            return bad(format!("t_max must be at least 2, got {}", self.t_max));
        }
        Ok(())
    }

    /// `T'`
    pub fn steps(&self) -> usize {
        self.clip_len / TEMPORAL_DOWNSAMPLE
    }

    /// Edge of the feature map after the conv stack.
    pub fn feature_edge(&self) -> usize {
        self.frame_size / SPATIAL_DOWNSAMPLE
    }

    /// Flattened per-frame feature size after the conv stack.
    pub fn frame_features(&self) -> usize {
        self.conv_channels * self.feature_edge().pow(2)
    }

    pub fn clip_shape(&self) -> [usize; 4] {
        [self.clip_len, self.in_channels, self.frame_size, self.frame_size]
    }
}

/// `P_s` and its argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePrediction<S> {
    pub logits: Vec<S>,
    /// Softmax of the logits.
    pub scores: Vec<S>,
    /// Lowest index attaining the maximum score.
    pub phase: usize,
}

impl<S: Scalar> PhasePrediction<S> {
    pub fn from_logits(logits: Vec<S>) -> Self {
        let mut scores = logits.clone();
        crate::nn::softmax_in_place(&mut scores);
        let mut phase = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[phase] {
                phase = i;
            }
        }
        Self { logits, scores, phase }
    }

    pub fn confidence(&self) -> S {
        self.scores[self.phase]
    }
}

/// Loss components of one clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    pub period: f64,
}

/// `recon_term = mean((recon − clip)²)`, `period_term = −ln P_s[label]`.
pub fn loss<S: Scalar>(
    recon: &Tensor<S>,
    clip: &Tensor<S>,
    phase: &PhasePrediction<S>,
    label: usize,
    lambda_period: f64,
) -> Result<LossTerms> {
    recon.check_same("model::loss", clip)?;
    if label >= phase.scores.len() {
        return Err(Error::OutOfRange {
            op: "model::loss",
            index: label,
            limit: phase.scores.len(),
        });
    }
    let n = clip.len().max(1) as f64;
    let recon_term = recon
        .data()
        .iter()
        .zip(clip.data())
        .map(|(&a, &b)| (a - b).as_f64().powi(2))
        .sum::<f64>()
        / n;
    let period_term = -phase.scores[label].as_f64().ln();
    Ok(LossTerms {
        total: recon_term + lambda_period * period_term,
        recon: recon_term,
        period: period_term,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VadModel<S> {
    pub config: ModelConfig,
    pub conv1: Conv2d<S>,
    pub conv2: Conv2d<S>,
    /// Temporal patch projection `2D → C`.
    pub patch: Dense<S>,
    pub pos: Embedding<S>,
    pub ln1: LayerNorm<S>,
    pub attn: Attention<S>,
    pub ln2: LayerNorm<S>,
    pub mlp1: Dense<S>,
    pub mlp2: Dense<S>,
    pub ln3: LayerNorm<S>,
    /// `f_p`
    pub head: Dense<S>,
    pub memory: PeriodicMemoryBank<S>,
    pub dec_fc: Dense<S>,
    pub deconv1: ConvTranspose2d<S>,
    pub deconv2: ConvTranspose2d<S>,
}

#[derive(Debug, Clone)]
struct EncoderCache<S> {
    a1: Tensor<S>,
    a2: Tensor<S>,
    tokens: Tensor<S>,
    ln1: LayerNormCache<S>,
    attn: AttentionCache<S>,
    ln2: LayerNormCache<S>,
    mlp_in: Tensor<S>,
    mlp_hidden: Tensor<S>,
    ln3: LayerNormCache<S>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ModelCache<S> {
    clip: Tensor<S>,
    enc: EncoderCache<S>,
    pooled: Tensor<S>,
    trace: Option<AddressingTrace<S>>,
    z: Tensor<S>,
    d0: Tensor<S>,
    d1: Tensor<S>,
    d2: Tensor<S>,
}

/// Result of a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<S> {
    pub recon: Tensor<S>,
    pub phase: PhasePrediction<S>,
    /// Encoder features `F`, `[T', C]`.
    pub features: Tensor<S>,
    pub cache: ModelCache<S>,
}

impl<S> ForwardPass<S> {
    pub fn trace(&self) -> Option<&AddressingTrace<S>> {
        self.cache.trace.as_ref()
    }
}

/// Phase and boost factor imposed on the memory instead of the classifier's
/// own prediction. Used to hold the non-differentiable argmax fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseOverride {
    pub phase: usize,
    pub boost_factor: f64,
}

/// Hands out consecutive, disjoint slices of a gradient list.
struct GradCursor<'a, S> {
    rest: &'a mut [Tensor<S>],
}

impl<'a, S> GradCursor<'a, S> {
    fn take(&mut self, n: usize) -> &'a mut [Tensor<S>] {
        let rest = std::mem::take(&mut self.rest);
        let (head, tail) = rest.split_at_mut(n);
        self.rest = tail;
        head
    }
}

fn mean_rows<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (t, c) = (x.rows(), x.cols());
    let mut out = vec![S::zero(); c];
    for row in x.data().chunks(c) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let k = S::lit(1.0 / t as f64);
    out.iter_mut().for_each(|v| *v *= k);
    Tensor::from_vec(&[1, c], out).expect("sized")
}

impl<S: Scalar> VadModel<S> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (cc, d, c) = (config.conv_channels, config.frame_features(), config.dim);
        Ok(Self {
            config,
            conv1: Conv2d::new("encoder.conv1", config.in_channels, cc, 4, 4, rng),
            conv2: Conv2d::new("encoder.conv2", cc, cc, 4, 4, rng),
            patch: Dense::new("encoder.patch", TEMPORAL_DOWNSAMPLE * d, c, rng),
            pos: Embedding::new("encoder.pos", config.steps(), c, rng),
            ln1: LayerNorm::new("encoder.ln1", c),
            attn: Attention::new("encoder.attn", c, rng),
            ln2: LayerNorm::new("encoder.ln2", c),
            mlp1: Dense::new("encoder.mlp1", c, 2 * c, rng),
            mlp2: Dense::new("encoder.mlp2", 2 * c, c, rng),
            ln3: LayerNorm::new("encoder.ln3", c),
            head: Dense::new("head", c, config.t_max, rng),
            memory: PeriodicMemoryBank::new(config.slots, c, config.t_max, config.softmax_axis, rng)?,
            dec_fc: Dense::new("decoder.fc", c, TEMPORAL_DOWNSAMPLE * d, rng),
            deconv1: ConvTranspose2d::new("decoder.deconv1", cc, cc, 4, 4, rng),
            deconv2: ConvTranspose2d::new("decoder.deconv2", cc, config.in_channels, 4, 4, rng),
        })
    }

    /// All parameters in a fixed order; gradient buffers follow it.
    pub fn params(&self) -> Vec<&Param<S>> {
        let mut p = Vec::new();
        p.extend(self.conv1.params());
        p.extend(self.conv2.params());
        p.extend(self.patch.params());
        p.extend(self.pos.params());
        p.extend(self.ln1.params());
        p.extend(self.attn.params());
        p.extend(self.ln2.params());
        p.extend(self.mlp1.params());
        p.extend(self.mlp2.params());
        p.extend(self.ln3.params());
        p.extend(self.head.params());
        p.push(&self.memory.items);
        p.extend(self.dec_fc.params());
        p.extend(self.deconv1.params());
        p.extend(self.deconv2.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut p = Vec::new();
        p.extend(self.conv1.params_mut());
        p.extend(self.conv2.params_mut());
        p.extend(self.patch.params_mut());
        p.extend(self.pos.params_mut());
        p.extend(self.ln1.params_mut());
        p.extend(self.attn.params_mut());
        p.extend(self.ln2.params_mut());
        p.extend(self.mlp1.params_mut());
        p.extend(self.mlp2.params_mut());
        p.extend(self.ln3.params_mut());
        p.extend(self.head.params_mut());
        p.push(&mut self.memory.items);
        p.extend(self.dec_fc.params_mut());
        p.extend(self.deconv1.params_mut());
        p.extend(self.deconv2.params_mut());
        p
    }

    pub fn zero_grads(&self) -> Vec<Tensor<S>> {
        self.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect()
    }

    /// Scalar parameter count, optionally restricted to trainable tensors.
    pub fn count_params(&self, trainable_only: bool) -> usize {
        self.params()
            .iter()
            .filter(|p| p.trainable || !trainable_only)
            .map(|p| p.numel())
            .sum()
    }

    pub fn is_adapted(&self) -> bool {
        self.attn.q.is_adapted() || self.attn.v.is_adapted()
    }

    /// `(rank, α)` of the attention adapters, if wrapped.
    pub fn adapter_settings(&self) -> Option<(usize, f64)> {
        match &self.attn.q {
            Projection::Adapted(l) => Some((l.rank, l.alpha)),
            Projection::Plain(_) => None,
        }
    }

    /// Casts every parameter to another precision.
    pub fn cast<T: Scalar>(&self) -> VadModel<T> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut out = VadModel::<T>::new(self.config, &mut rng).expect("validated config");
        if let Some((rank, alpha)) = self.adapter_settings() {
            crate::lora::wrap_projections(&mut out, rank, alpha, &mut rng).expect("fresh model");
        }
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.value = src.value.cast();
            dst.trainable = src.trainable;
        }
        out
    }

    fn check_clip(&self, clip: &Tensor<S>) -> Result<()> {
        clip.expect_shape("VadModel::encode", &self.config.clip_shape())
    }

    /// Encoder features `F`, `[T', C]`.
    pub fn encode(&self, clip: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_clip(clip)?;
        let (_, x) = self.encode_cached(clip)?;
        Ok(x)
    }

    fn encode_cached(&self, clip: &Tensor<S>) -> Result<(EncoderCache<S>, Tensor<S>)> {
        let cfg = &self.config;
        let (c1, _) = self.conv1.forward(clip)?;
        let (a1, _) = TANH.forward(&c1)?;
        let (c2, _) = self.conv2.forward(&a1)?;
        let (a2, _) = TANH.forward(&c2)?;
        let tokens = a2
            .clone()
            .reshape(&[cfg.steps(), TEMPORAL_DOWNSAMPLE * cfg.frame_features()])?;
        let (p, _) = self.patch.forward(&tokens)?;
        let (x0, _) = self.pos.forward(&p)?;
        let (h, ln1) = self.ln1.forward(&x0)?;
        let (a, attn) = self.attn.forward(&h)?;
        let mut x1 = x0;
        x1.add_assign(&a)?;
        let (mlp_in, ln2) = self.ln2.forward(&x1)?;
        let (u, _) = self.mlp1.forward(&mlp_in)?;
        let (mlp_hidden, _) = TANH.forward(&u)?;
        let (m, _) = self.mlp2.forward(&mlp_hidden)?;
        let mut x2 = x1;
        x2.add_assign(&m)?;
        let (f, ln3) = self.ln3.forward(&x2)?;
        let cache = EncoderCache {
            a1,
            a2,
            tokens,
            ln1,
            attn,
            ln2,
            mlp_in,
            mlp_hidden,
            ln3,
        };
        Ok((cache, f))
    }

    /// `P_s = softmax(f_p(mean_t F))`.
    pub fn classify_period(&self, features: &Tensor<S>) -> Result<PhasePrediction<S>> {
        let (logits, _) = self.head.forward(&mean_rows(features))?;
        Ok(PhasePrediction::from_logits(logits.into_data()))
    }

    /// Full pipeline with everything the backward pass needs.
    pub fn forward(&self, clip: &Tensor<S>, fixed: Option<PhaseOverride>) -> Result<ForwardPass<S>> {
        self.check_clip(clip)?;
        let cfg = &self.config;
        let (enc, f) = self.encode_cached(clip)?;
        let pooled = mean_rows(&f);
        let (logits, _) = self.head.forward(&pooled)?;
        let phase = PhasePrediction::from_logits(logits.into_data());

        let (z, trace) = if cfg.use_memory {
            let (t_p, scores) = match fixed {
                Some(o) => {
                    let mut s = vec![S::zero(); cfg.t_max];
                    *s.get_mut(o.phase).ok_or(Error::OutOfRange {
                        op: "VadModel::forward",
                        index: o.phase,
                        limit: cfg.t_max,
                    })? = S::lit(o.boost_factor - 1.0);
                    (o.phase, s)
                }
                None => (phase.phase, phase.scores.clone()),
            };
            let (z, trace) = memory_forward(&f, &self.memory, t_p, &scores)?;
            (z, Some(trace))
        } else {
            (f.clone(), None)
        };

        let e = cfg.feature_edge();
        let (d0, _) = self.dec_fc.forward(&z)?;
        let d0 = d0.reshape(&[cfg.clip_len, cfg.conv_channels, e, e])?;
        let (d0, _) = TANH.forward(&d0)?;
        let (d1, _) = self.deconv1.forward(&d0)?;
        let (d1, _) = TANH.forward(&d1)?;
        let (d2, _) = self.deconv2.forward(&d1)?;
        let (recon, _) = SIGMOID.forward(&d2)?;
        Ok(ForwardPass {
            recon: recon.clone(),
            phase,
            features: f,
            cache: ModelCache {
                clip: clip.clone(),
                enc,
                pooled,
                trace,
                z,
                d0,
                d1,
                d2: recon,
            },
        })
    }

    /// `(recon, P_s, trace)`; the trace is absent when the memory is bypassed.
    pub fn reconstruct(&self, clip: &Tensor<S>) -> Result<(Tensor<S>, PhasePrediction<S>, Option<AddressingTrace<S>>)> {
        let fp = self.forward(clip, None)?;
        Ok((fp.recon, fp.phase, fp.cache.trace))
    }

    /// Backpropagates `d_recon` and `d_logits` through the cached pass,
    /// accumulating into `grads` (aligned with [`VadModel::params`]).
    /// Returns `dL/dclip` when the conv stack was traversed.
    pub fn backward(
        &self,
        fp: &ForwardPass<S>,
        d_recon: &Tensor<S>,
        d_logits: &[S],
        grads: &mut [Tensor<S>],
    ) -> Result<Option<Tensor<S>>> {
        let n_params = self.params().len();
        if grads.len() != n_params {
            return Err(Error::shape("VadModel::backward", &[grads.len()], &[n_params]));
        }
        let cfg = &self.config;
        let c = &fp.cache;
        let mut cur = GradCursor { rest: grads };
        let g_conv1 = cur.take(2);
        let g_conv2 = cur.take(2);
        let g_patch = cur.take(2);
        let g_pos = cur.take(1);
        let g_ln1 = cur.take(2);
        let g_attn = cur.take(self.attn.params().len());
        let g_ln2 = cur.take(2);
        let g_mlp1 = cur.take(2);
        let g_mlp2 = cur.take(2);
        let g_ln3 = cur.take(2);
        let g_head = cur.take(2);
        let g_mem = cur.take(1);
        let g_fc = cur.take(2);
        let g_dc1 = cur.take(2);
        let g_dc2 = cur.take(2);

        // decoder
        let dd2 = SIGMOID.backward(&c.d2, d_recon, &mut [])?;
        let dd1 = self.deconv2.backward(&c.d1, &dd2, g_dc2)?;
        let dd1 = TANH.backward(&c.d1, &dd1, &mut [])?;
        let dd0 = self.deconv1.backward(&c.d0, &dd1, g_dc1)?;
        let dd0 = TANH.backward(&c.d0, &dd0, &mut [])?;
        let dd0 = dd0.reshape(&[cfg.steps(), TEMPORAL_DOWNSAMPLE * cfg.frame_features()])?;
        let dz = self.dec_fc.backward(&c.z, &dd0, g_fc)?;

        // memory
        let mut df = match &c.trace {
            Some(trace) => {
                let (df, d_items) = memory_backward(trace, &self.memory, &dz)?;
                g_mem[0].add_assign(&d_items)?;
                df
            }
            None => dz,
        };

        // period head on the pooled features
        let dl = Tensor::from_vec(&[1, cfg.t_max], d_logits.to_vec())?;
        let dpooled = self.head.backward(&c.pooled, &dl, g_head)?;
        let k = S::lit(1.0 / cfg.steps() as f64);
        for row in df.data_mut().chunks_mut(cfg.dim) {
            for (d, &p) in row.iter_mut().zip(dpooled.data()) {
                *d += p * k;
            }
        }

        // transformer block
        let e = &c.enc;
        let dx2 = self.ln3.backward(&e.ln3, &df, g_ln3)?;
        let dhidden = self.mlp2.backward(&e.mlp_hidden, &dx2, g_mlp2)?;
        let du = TANH.backward(&e.mlp_hidden, &dhidden, &mut [])?;
        let dmlp_in = self.mlp1.backward(&e.mlp_in, &du, g_mlp1)?;
        let mut dx1 = self.ln2.backward(&e.ln2, &dmlp_in, g_ln2)?;
        dx1.add_assign(&dx2)?;
        let dh = self.attn.backward(&e.attn, &dx1, g_attn)?;
        let mut dx0 = self.ln1.backward(&e.ln1, &dh, g_ln1)?;
        dx0.add_assign(&dx1)?;
        let dp = self.pos.backward(&(), &dx0, g_pos)?;
        let dtokens = self.patch.backward(&e.tokens, &dp, g_patch)?;

        let conv_trainable = self.conv1.params().iter().chain(self.conv2.params().iter()).any(|p| p.trainable);
        if !conv_trainable {
            return Ok(None);
        }
        let da2 = dtokens.reshape(e.a2.shape())?;
        let dc2 = TANH.backward(&e.a2, &da2, &mut [])?;
        let da1 = self.conv2.backward(&e.a1, &dc2, g_conv2)?;
        let dc1 = TANH.backward(&e.a1, &da1, &mut [])?;
        let dclip = self.conv1.backward(&c.clip, &dc1, g_conv1)?;
        Ok(Some(dclip))
    }

    /// Forward, loss and backward for one labelled clip. Gradients are added
    /// to `grads`.
    pub fn accumulate_gradients(
        &self,
        clip: &Tensor<S>,
        label: usize,
        lambda_period: f64,
        fixed: Option<PhaseOverride>,
        grads: &mut [Tensor<S>],
    ) -> Result<(LossTerms, Option<Tensor<S>>)> {
        let fp = self.forward(clip, fixed)?;
        let terms = loss(&fp.recon, clip, &fp.phase, label, lambda_period)?;
        if !terms.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {} (recon {}, period {})",
                terms.total, terms.recon, terms.period
            )));
        }
        let k = S::lit(2.0 / clip.len() as f64);
        let mut d_recon = fp.recon.clone();
        for (d, &x) in d_recon.data_mut().iter_mut().zip(clip.data()) {
            *d = (*d - x) * k;
        }
        let lam = S::lit(lambda_period);
        let d_logits: Vec<S> = fp
            .phase
            .scores
            .iter()
            .enumerate()
            .map(|(i, &p)| lam * (p - if i == label { S::one() } else { S::zero() }))
            .collect();
        let dclip = self.backward(&fp, &d_recon, &d_logits, grads)?;
        Ok((terms, dclip))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterMeta {
    pub rank: usize,
    pub alpha: f64,
}

/// Architecture description stored in checkpoint headers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub adapter: Option<AdapterMeta>,
}

impl<S: Scalar> VadModel<S> {
    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            model: self.config,
            adapter: self.adapter_settings().map(|(rank, alpha)| AdapterMeta { rank, alpha }),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        crate::nn::checkpoint::encode(serde_json::to_value(self.meta())?, &self.params())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, tensors) = crate::nn::checkpoint::decode::<S>(bytes)?;
        let meta: CheckpointMeta = serde_json::from_value(header.meta)
            .map_err(|e| Error::Checkpoint(format!("unrecognized model description: {e}")))?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Self::new(meta.model, &mut rng)?;
        if let Some(a) = meta.adapter {
            crate::lora::wrap_projections(&mut model, a.rank, a.alpha, &mut rng)?;
        }
        let expected = model.params().len();
        if tensors.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, the architecture has {expected}",
                tensors.len()
            )));
        }
        crate::nn::checkpoint::assign_by_name(&mut model.params_mut(), &tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// A model plus one labelled clip, seen as a differentiable fragment whose
/// input is the clip. The memory phase is held fixed so that finite
/// differences see the same piecewise-smooth function as the gradients.
#[derive(Debug, Clone)]
pub struct ModelProbe {
    pub model: VadModel<f64>,
    pub label: usize,
    pub lambda_period: f64,
    pub fixed: PhaseOverride,
}

impl crate::nn::Fragment<f64> for ModelProbe {
    fn params(&self) -> Vec<&Param<f64>> {
        self.model.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.model.params_mut()
    }

    fn evaluate(&self, input: &Tensor<f64>) -> Result<(f64, Vec<Tensor<f64>>, Tensor<f64>)> {
        let mut grads = self.model.zero_grads();
        let (terms, dclip) =
            self.model
                .accumulate_gradients(input, self.label, self.lambda_period, Some(self.fixed), &mut grads)?;
        let mut dclip = dclip.unwrap_or_else(|| Tensor::zeros(input.shape()));
        // the clip is also the reconstruction target
        let fp = self.model.forward(input, Some(self.fixed))?;
        let k = 2.0 / input.len() as f64;
        for ((d, &r), &x) in dclip.data_mut().iter_mut().zip(fp.recon.data()).zip(input.data()) {
            *d -= k * (r - x);
        }
        Ok((terms.total, grads, dclip))
    }
}
