//! Low-rank adapters on the attention q/v projections and the encoder
//! freeze policy used for parameter-efficient fine-tuning.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dataset_tensor, train_on_frames, ModelConfig, TrainConfig, TrainLog, VadModel};
use crate::nn::{checkpoint, Dense, Layer, LayerKind, Param, Projection};
use crate::synth::Dataset;
use crate::scalar::Scalar;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

pub const DEFAULT_RANK: usize = 4;
pub const DEFAULT_ALPHA: f64 = 8.0;
/// Standard deviation of the Gaussian used for `A`.
pub const A_INIT_STD: f64 = 0.02;

/// `y = W₀x + b + (α/r)·B·(A·x)` with `W₀`, `b` frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraDense<S> {
    pub base: Dense<S>,
    /// `[r, d_in]`
    pub a: Param<S>,
    /// `[d_out, r]`, zero at initialization.
    pub b: Param<S>,
    pub rank: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct LoraCache<S> {
    x: Tensor<S>,
    /// `A·x` per row, `[n, r]`
    h: Tensor<S>,
}

impl<S: Scalar> LoraDense<S> {
    pub fn wrap<R: Rng + ?Sized>(mut base: Dense<S>, rank: usize, alpha: f64, rng: &mut R) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("adapter rank must be positive".into()));
        }
        let prefix = base
            .weight
            .name
            .strip_suffix(".weight")
            .unwrap_or(&base.weight.name)
            .to_string();
        base.weight.trainable = false;
        base.bias.trainable = false;
        let normal = Normal::new(0.0, A_INIT_STD).expect("valid std");
        let (d_in, d_out) = (base.d_in(), base.d_out());
        let a_data = (0..rank * d_in).map(|_| S::lit(normal.sample(rng))).collect();
        Ok(Self {
            a: Param::new(format!("{prefix}.lora_a"), Tensor::from_vec(&[rank, d_in], a_data)?),
            b: Param::zeros(format!("{prefix}.lora_b"), &[d_out, rank]),
            base,
            rank,
            alpha,
        })
    }

    pub fn scaling(&self) -> S {
        S::lit(self.alpha / self.rank as f64)
    }

    /// `W₀ + (α/r)·B·A`
    pub fn merged_weight(&self) -> Result<Tensor<S>> {
        let mut delta = self.b.value.matmul(&self.a.value)?;
        delta.scale(self.scaling());
        let mut w = self.base.weight.value.clone();
        w.add_assign(&delta)?;
        Ok(w)
    }

    pub fn merge(&self) -> Result<Dense<S>> {
        let mut d = self.base.clone();
        d.weight.value = self.merged_weight()?;
        d.weight.trainable = true;
        d.bias.trainable = true;
        Ok(d)
    }

    pub fn adapter_params(&self) -> usize {
        self.a.numel() + self.b.numel()
    }
}

impl<S: Scalar> Layer<S> for LoraDense<S> {
    type Cache = LoraCache<S>;

    fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }

    fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, LoraCache<S>)> {
        let (mut y, _) = self.base.forward(x)?;
        let n = x.rows();
        let (d_in, d_out, r) = (self.base.d_in(), self.base.d_out(), self.rank);
        let mut h = vec![S::zero(); n * r];
        gemm_nt(x.data(), self.a.value.data(), &mut h, n, d_in, r);
        let mut delta = vec![S::zero(); n * d_out];
        gemm_nt(&h, self.b.value.data(), &mut delta, n, r, d_out);
        let k = self.scaling();
        for (o, d) in y.data_mut().iter_mut().zip(delta) {
            *o += k * d;
        }
        Ok((
            y,
            LoraCache {
                x: x.clone(),
                h: Tensor::from_vec(&[n, r], h)?,
            },
        ))
    }

    fn backward(&self, c: &LoraCache<S>, dy: &Tensor<S>, grads: &mut [Tensor<S>]) -> Result<Tensor<S>> {
        let (gbase, gab) = grads.split_at_mut(2);
        let [ga, gb] = gab else {
            return Err(Error::Config("LoraDense expects four gradient buffers".into()));
        };
        let mut dx = self.base.backward(&c.x, dy, gbase)?;
        let n = c.x.rows();
        let (d_in, d_out, r) = (self.base.d_in(), self.base.d_out(), self.rank);
        let k = self.scaling();
        let mut dy_s = dy.clone();
        dy_s.scale(k);
        // dB += (k·dy)ᵀ·h ; dh = (k·dy)·B ; dA += dhᵀ·x ; dx += dh·A
        gemm_tn(dy_s.data(), c.h.data(), gb.data_mut(), d_out, n, r);
        let mut dh = vec![S::zero(); n * r];
        gemm_nn(dy_s.data(), self.b.value.data(), &mut dh, n, d_out, r);
        gemm_tn(&dh, c.x.data(), ga.data_mut(), r, n, d_in);
        gemm_nn(&dh, self.a.value.data(), dx.data_mut(), n, r, d_in);
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<S>> {
        let mut p = self.base.params();
        p.push(&self.a);
        p.push(&self.b);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut p = self.base.params_mut();
        p.push(&mut self.a);
        p.push(&mut self.b);
        p
    }
}

/// Which parameters stay trainable after wrapping. The encoder's patch
/// projection, position table, layer norms and adapter matrices are always
/// trainable; everything else in the encoder is frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FreezePolicy {
    pub train_decoder: bool,
    pub train_memory: bool,
    pub train_head: bool,
}

impl FreezePolicy {
    pub fn is_trainable(&self, name: &str) -> bool {
        const ALWAYS: [&str; 3] = ["encoder.patch.", "encoder.pos.", "encoder.ln"];
        ALWAYS.iter().any(|p| name.starts_with(p))
            || name.contains(".lora_")
            || (self.train_decoder && name.starts_with("decoder."))
            || (self.train_memory && name.starts_with("memory."))
            || (self.train_head && name.starts_with("head."))
    }

    pub fn apply<S: Scalar>(&self, model: &mut VadModel<S>) {
        for p in model.params_mut() {
            p.trainable = self.is_trainable(&p.name);
        }
    }
}

fn adapt<S: Scalar, R: Rng + ?Sized>(p: &mut Projection<S>, rank: usize, alpha: f64, rng: &mut R) -> Result<()> {
    let Projection::Plain(base) = p else {
        return Err(Error::Adapter("projection is already adapted".into()));
    };
    *p = Projection::Adapted(LoraDense::wrap(base.clone(), rank, alpha, rng)?);
    Ok(())
}

/// Wraps the attention q and v projections without touching other flags.
pub fn wrap_projections<S: Scalar, R: Rng + ?Sized>(
    model: &mut VadModel<S>,
    rank: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<()> {
    if model.is_adapted() {
        return Err(Error::Adapter("model is already adapted".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Config(format!("adapter alpha must be positive, got {alpha}")));
    }
    adapt(&mut model.attn.q, rank, alpha, rng)?;
    adapt(&mut model.attn.v, rank, alpha, rng)
}

/// Adds adapters to q and v and applies `policy`.
pub fn wrap<S: Scalar, R: Rng + ?Sized>(
    model: &mut VadModel<S>,
    rank: usize,
    alpha: f64,
    policy: FreezePolicy,
    rng: &mut R,
) -> Result<()> {
    wrap_projections(model, rank, alpha, rng)?;
    policy.apply(model);
    Ok(())
}

/// Scalar parameter count, optionally restricted to trainable tensors.
pub fn count_params<S: Scalar>(model: &VadModel<S>, trainable_only: bool) -> usize {
    model.count_params(trainable_only)
}

/// Scalars held by adapter matrices: `Σ r·(d_in + d_out)` over targets.
pub fn adapter_param_count<S: Scalar>(model: &VadModel<S>) -> usize {
    [&model.attn.q, &model.attn.v]
        .into_iter()
        .map(|p| match p {
            Projection::Adapted(l) => l.adapter_params(),
            Projection::Plain(_) => 0,
        })
        .sum()
}

/// Folds adapters into their base weights (`W₀ + (α/r)·B·A`). All
/// parameters of the result are trainable.
pub fn merge<S: Scalar>(model: &VadModel<S>) -> Result<VadModel<S>> {
    if !model.is_adapted() {
        return Err(Error::Adapter("model carries no adapters to merge".into()));
    }
    let mut out = model.clone();
    for p in [&mut out.attn.q, &mut out.attn.v] {
        if let Projection::Adapted(l) = p {
            *p = Projection::Plain(l.merge()?);
        }
    }
    for p in out.params_mut() {
        p.trainable = true;
    }
    Ok(out)
}

/// Stored next to the adapter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterCheckpointMeta {
    pub kind: String,
    pub base: ModelConfig,
    pub rank: usize,
    pub alpha: f64,
}

const ADAPTER_KIND: &str = "adapter";

/// Saves only the trainable tensors of an adapted model (adapters, patch
/// projection, position table, layer norms).
pub fn adapter_bytes<S: Scalar>(model: &VadModel<S>) -> Result<Vec<u8>> {
    let Some((rank, alpha)) = model.adapter_settings() else {
        return Err(Error::Adapter("model carries no adapters".into()));
    };
    let meta = AdapterCheckpointMeta {
        kind: ADAPTER_KIND.into(),
        base: model.config,
        rank,
        alpha,
    };
    let params: Vec<&Param<S>> = model.params().into_iter().filter(|p| p.trainable).collect();
    checkpoint::encode(serde_json::to_value(meta)?, &params)
}

/// Applies an adapter checkpoint to a base model, returning the adapted
/// model. Tensors absent from the checkpoint keep the base values.
pub fn apply_adapter_bytes<S: Scalar>(base: &VadModel<S>, bytes: &[u8]) -> Result<VadModel<S>> {
    let (header, tensors) = checkpoint::decode::<S>(bytes)?;
    let meta: AdapterCheckpointMeta = serde_json::from_value(header.meta)
        .map_err(|e| Error::Adapter(format!("not an adapter checkpoint: {e}")))?;
    if meta.kind != ADAPTER_KIND {
        return Err(Error::Adapter(format!("unexpected checkpoint kind {:?}", meta.kind)));
    }
    if meta.base != base.config {
        return Err(Error::Adapter("adapter was trained for a different architecture".into()));
    }
    let mut model = base.clone();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    wrap_projections(&mut model, meta.rank, meta.alpha, &mut rng)?;
    for p in model.params_mut() {
        p.trainable = false;
    }
    for t in tensors {
        let mut params = model.params_mut();
        let target = params
            .iter_mut()
            .find(|p| p.name == t.name)
            .ok_or_else(|| Error::Adapter(format!("base model has no tensor {}", t.name)))?;
        if target.value.shape() != t.value.shape() {
            return Err(Error::Adapter(format!(
                "tensor {} has shape {:?}, base expects {:?}",
                t.name,
                t.value.shape(),
                target.value.shape()
            )));
        }
        target.value = t.value;
        target.trainable = t.trainable;
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    Full,
    Peft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub mode: FinetuneMode,
    /// Leading fraction of the target train split used, in `(0, 1]`.
    pub few_shot_fraction: f64,
    pub rank: usize,
    pub alpha: f64,
    pub policy: FreezePolicy,
    /// Optimizer and schedule; the architecture fields are taken from the
    /// pretrained model.
    pub train: TrainConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            mode: FinetuneMode::Peft,
            few_shot_fraction: 0.2,
            rank: DEFAULT_RANK,
            alpha: DEFAULT_ALPHA,
            policy: FreezePolicy::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Stream of the run seed used for adapter initialization.
pub const STREAM_ADAPTER: u64 = 0x3_0000;

/// Prepares the model `finetune` would train, without training it.
pub fn prepare<S: Scalar>(pretrained: &VadModel<S>, config: &FinetuneConfig) -> Result<VadModel<S>> {
    let mut model = pretrained.clone();
    match config.mode {
        FinetuneMode::Full => {
            for p in model.params_mut() {
                p.trainable = true;
            }
        }
        FinetuneMode::Peft => {
            let mut rng = crate::synth::substream(config.train.seed, STREAM_ADAPTER);
            wrap(&mut model, config.rank, config.alpha, config.policy, &mut rng)?;
        }
    }
    Ok(model)
}

/// Number of leading train frames a few-shot fraction selects.
pub fn few_shot_frames(num_train: usize, fraction: f64, clip_len: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("few_shot_fraction must lie in (0, 1], got {fraction}")));
    }
    let n = ((num_train as f64 * fraction).ceil() as usize).min(num_train);
    if n < clip_len {
        return Err(Error::Config(format!(
            "few-shot split of {n} frames is shorter than one clip ({clip_len})"
        )));
    }
    Ok(n)
}

/// Fine-tunes a pretrained model on the leading `few_shot_fraction` of the
/// target train split.
pub fn finetune(
    pretrained: &VadModel<f32>,
    dataset: &Dataset,
    config: &FinetuneConfig,
    out_dir: Option<&std::path::Path>,
) -> Result<(VadModel<f32>, TrainLog)> {
    let m = &dataset.manifest;
    if m.t_max != pretrained.config.t_max || m.spec.frame_size != pretrained.config.frame_size {
        return Err(Error::Checkpoint(
            "pretrained model does not match the dataset (t_max or frame size)".into(),
        ));
    }
    let n = few_shot_frames(m.num_train, config.few_shot_fraction, pretrained.config.clip_len)?;
    let train_config = TrainConfig {
        model: pretrained.config,
        ..config.train
    };
    let mut model = prepare(pretrained, config)?;
    let frames = dataset_tensor(&dataset.frames[..n], pretrained.config.contrast_norm)?;
    let log = train_on_frames(&mut model, &frames, &m.phase_labels[..n], &train_config, out_dir)?;
    Ok((model, log))
}
