//! Clip sampling and the training loop.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, VadModel};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::synth::{substream, Dataset, Frame};
use crate::tensor::Tensor;

/// Stream of the run seed used for parameter initialization.
pub const STREAM_INIT: u64 = 0x1_0000;
/// Stream of the run seed used for clip order.
pub const STREAM_SAMPLING: u64 = 0x2_0000;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Weight of the phase cross-entropy.
    pub lambda_period: f64,
    pub seed: u64,
    /// Clips drawn per epoch; 0 uses every stride-1 clip.
    pub clips_per_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 8,
            lr: 1e-4,
            epochs: 50,
            lambda_period: 1.0,
            seed: 0,
            clips_per_epoch: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lambda_period >= 0.0 && self.lambda_period.is_finite()) {
            return Err(Error::Config(format!("lambda_period must be non-negative, got {}", self.lambda_period)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub recon_term: f64,
    pub period_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Optimizer steps taken.
    pub steps: u64,
    pub wall_seconds: f64,
    pub trainable_params: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,recon_term,period_term,total\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", e.epoch, e.recon_term, e.period_term, e.total);
        }
        s
    }

    pub fn final_epoch(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }
}

/// Frames as one `[N, Ch, H, W]` tensor with intensities in `[0, 1]`. With
/// `contrast_norm` each frame is min-max stretched over all its channels,
/// which cancels any increasing affine intensity change; a flat frame maps
/// to zeros.
pub fn dataset_tensor<S: Scalar>(frames: &[Frame], contrast_norm: bool) -> Result<Tensor<S>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Config("no frames to convert".into()))?;
    let (w, h, c) = (first.width, first.height, first.channels);
    let mut data = Vec::with_capacity(frames.len() * w * h * c);
    let k = 1.0 / 255.0;
    for (i, f) in frames.iter().enumerate() {
        if (f.width, f.height, f.channels) != (w, h, c) {
            return Err(Error::Config(format!(
                "frame {i} is {}x{}x{}, expected {w}x{h}x{c}",
                f.width, f.height, f.channels
            )));
        }
        let (lo, scale) = match (f.pixels.iter().min(), f.pixels.iter().max()) {
            (Some(&lo), Some(&hi)) if contrast_norm && hi > lo => (lo as f64, 1.0 / (hi - lo) as f64),
            (Some(_), Some(_)) if contrast_norm => (0.0, 0.0),
            _ => (0.0, k),
        };
        for ch in 0..c {
            data.extend(f.pixels.iter().skip(ch).step_by(c).map(|&p| S::lit((p as f64 - lo) * scale)));
        }
    }
    Tensor::from_vec(&[frames.len(), c, h, w], data)
}

/// The `len` frames starting at `start`.
pub fn clip_at<S: Scalar>(frames: &Tensor<S>, start: usize, len: usize) -> Result<Tensor<S>> {
    let shape = frames.shape();
    if shape.len() != 4 {
        return Err(Error::shape("clip_at", shape, &[usize::MAX; 4]));
    }
    if start + len > shape[0] {
        return Err(Error::OutOfRange {
            op: "clip_at",
            index: start + len,
            limit: shape[0],
        });
    }
    let per = shape[1] * shape[2] * shape[3];
    Tensor::from_vec(
        &[len, shape[1], shape[2], shape[3]],
        frames.data()[start * per..(start + len) * per].to_vec(),
    )
}

/// Phase label of a clip: the label of its centre frame `start + len/2`.
pub fn label_of_clip(phase_labels: &[usize], start: usize, len: usize) -> usize {
    phase_labels[start + len / 2]
}

/// Trains a fresh `f32` model on the train split of `dataset`. When
/// `out_dir` is given, the checkpoint and loss log are rewritten after every
/// epoch.
pub fn train(dataset: &Dataset, config: &TrainConfig, out_dir: Option<&Path>) -> Result<(VadModel<f32>, TrainLog)> {
    config.validate()?;
    let m = &dataset.manifest;
    if m.num_train == 0 {
        return Err(Error::Config("train split is empty".into()));
    }
    if m.t_max != config.model.t_max {
        return Err(Error::Config(format!(
            "dataset has t_max {} but the model expects {}",
            m.t_max, config.model.t_max
        )));
    }
    let mut rng = substream(config.seed, STREAM_INIT);
    let mut model = VadModel::new(config.model, &mut rng)?;
    let frames = dataset_tensor(dataset.train_frames(), config.model.contrast_norm)?;
    let log = train_on_frames(&mut model, &frames, &m.phase_labels[..m.num_train], config, out_dir)?;
    Ok((model, log))
}

/// Continues training `model` on `frames` with per-frame `phase_labels`.
/// Frozen parameters are never updated.
pub fn train_on_frames<S: Scalar>(
    model: &mut VadModel<S>,
    frames: &Tensor<S>,
    phase_labels: &[usize],
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainLog> {
    config.validate()?;
    let t = model.config.clip_len;
    let n = frames.shape().first().copied().unwrap_or(0);
    if n < t {
        return Err(Error::Config(format!("{n} training frames cannot hold a clip of {t}")));
    }
    if phase_labels.len() != n {
        return Err(Error::shape("train_on_frames", &[phase_labels.len()], &[n]));
    }
    let started = Instant::now();
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &model.params(),
    );
    let mut sampler = substream(config.seed, STREAM_SAMPLING);
    let mut starts: Vec<usize> = (0..=n - t).collect();
    let per_epoch = match config.clips_per_epoch {
        0 => starts.len(),
        k => k.min(starts.len()),
    };
    let mut log = TrainLog {
        epochs: Vec::with_capacity(config.epochs),
        steps: 0,
        wall_seconds: 0.0,
        trainable_params: model.count_params(true),
    };
    let mut grads = model.zero_grads();
    for epoch in 1..=config.epochs {
        starts.shuffle(&mut sampler);
        let (mut recon, mut period, mut total) = (0.0, 0.0, 0.0);
        for batch in starts[..per_epoch].chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| g.fill(S::zero()));
            for &s in batch {
                let clip = clip_at(frames, s, t)?;
                let label = label_of_clip(phase_labels, s, t);
                let (terms, _) = model.accumulate_gradients(&clip, label, config.lambda_period, None, &mut grads)?;
                recon += terms.recon;
                period += terms.period;
                total += terms.total;
            }
            let k = S::lit(1.0 / batch.len() as f64);
            grads.iter_mut().for_each(|g| g.scale(k));
            if !grads.iter().all(Tensor::all_finite) {
                return Err(Error::NonFinite(format!("gradient at epoch {epoch}, step {}", log.steps + 1)));
            }
            adam.step(&mut model.params_mut(), &grads)?;
            log.steps += 1;
        }
        let k = per_epoch as f64;
        log.epochs.push(EpochLog {
            epoch,
            recon_term: recon / k,
            period_term: period / k,
            total: total / k,
        });
        if let Some(dir) = out_dir {
            model.save(&dir.join(CHECKPOINT_FILE))?;
            let path = dir.join(TRAIN_LOG_FILE);
            std::fs::write(&path, log.to_csv()).map_err(|e| Error::io(&path, e))?;
        }
    }
    log.wall_seconds = started.elapsed().as_secs_f64();
    Ok(log)
}
