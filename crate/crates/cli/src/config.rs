//! Flat `key = value` run configuration.
//!
//! Every key has a default; a config file and `--set` overrides may change
//! any of them, and unknown keys are an error. The resolved configuration is
//! written next to every command's outputs in the same format, so it can be
//! fed back with `--config` to repeat the run.

use std::fs;
use std::path::Path;

use pvad::lora::{FinetuneConfig, FinetuneMode, FreezePolicy};
use pvad::memory::SoftmaxAxis;
use pvad::model::{ModelConfig, TrainConfig};
use pvad::scoring::EvalConfig;
use pvad::synth::DatasetManifest;
use pvad::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives data generation, initialization, sampling and adapter init.
    pub seed: u64,
    /// Scenario preset used by `gen`.
    pub preset: String,

    pub clip_len: usize,
    pub conv_channels: usize,
    pub dim: usize,
    pub slots: usize,
    pub softmax_axis: SoftmaxAxis,
    pub use_memory: bool,
    pub contrast_norm: bool,

    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub lambda_period: f64,
    pub clips_per_epoch: usize,

    pub fuse_weight: f64,
    pub window: usize,
    pub circular: bool,

    pub few_shot_fraction: f64,
    pub rank: usize,
    pub alpha: f64,
    pub train_decoder: bool,
    pub train_memory: bool,
    pub train_head: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let e = EvalConfig::default();
        let f = FinetuneConfig::default();
        Self {
            seed: 0,
            preset: "oscillator-64".into(),
            clip_len: t.model.clip_len,
            conv_channels: t.model.conv_channels,
            dim: t.model.dim,
            slots: t.model.slots,
            softmax_axis: t.model.softmax_axis,
            use_memory: t.model.use_memory,
            contrast_norm: t.model.contrast_norm,
            batch_size: t.batch_size,
            lr: t.lr,
            epochs: t.epochs,
            lambda_period: t.lambda_period,
            clips_per_epoch: t.clips_per_epoch,
            fuse_weight: e.fuse_weight,
            window: e.window,
            circular: e.circular,
            few_shot_fraction: f.few_shot_fraction,
            rank: f.rank,
            alpha: f.alpha,
            train_decoder: f.policy.train_decoder,
            train_memory: f.policy.train_memory,
            train_head: f.policy.train_head,
        }
    }
}

fn config_err(msg: String) -> Error {
    Error::Config(msg)
}

/// Converts `raw` to the JSON type of the default value for `key`.
fn typed_value(key: &str, raw: &str, like: &Value) -> Result<Value> {
    let bad = |what: &str| config_err(format!("{key}: expected {what}, got {raw:?}"));
    Ok(match like {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad("true or false"))?),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad("a non-negative integer"))?),
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|_| bad("a number"))?;
            serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(|| bad("a finite number"))?
        }
        _ => Value::String(raw.to_string()),
    })
}

impl RunConfig {
    fn to_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("RunConfig serializes to an object"),
        }
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut map = self.to_map();
        let like = map
            .get(key)
            .ok_or_else(|| config_err(format!("unknown key {key:?}")))?;
        let v = typed_value(key, raw.trim(), like)?;
        map.insert(key.to_string(), v);
        *self = serde_json::from_value(Value::Object(map)).map_err(|e| config_err(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Applies a `KEY=VALUE` override from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| config_err(format!("override {pair:?} is not KEY=VALUE")))?;
        self.set(k.trim(), v)
    }

    /// Parses config text on top of the defaults. Blank lines and lines
    /// starting with `#` are skipped; a key may appear only once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(config_err(format!("line {}: duplicate key {k:?}", n + 1)));
            }
            cfg.set(k, v).map_err(|e| config_err(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Every key, sorted, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            let v = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, self.to_text()).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    /// Model shape for a dataset: frame size, channels and phase classes
    /// come from the data.
    pub fn model_config(&self, manifest: &DatasetManifest, channels: usize) -> ModelConfig {
        ModelConfig {
            clip_len: self.clip_len,
            frame_size: manifest.spec.frame_size,
            in_channels: channels,
            conv_channels: self.conv_channels,
            dim: self.dim,
            slots: self.slots,
            t_max: manifest.t_max,
            softmax_axis: self.softmax_axis,
            use_memory: self.use_memory,
            contrast_norm: self.contrast_norm,
        }
    }

    pub fn train_config(&self, model: ModelConfig) -> TrainConfig {
        TrainConfig {
            model,
            batch_size: self.batch_size,
            lr: self.lr,
            epochs: self.epochs,
            lambda_period: self.lambda_period,
            seed: self.seed,
            clips_per_epoch: self.clips_per_epoch,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            fuse_weight: self.fuse_weight,
            window: self.window,
            circular: self.circular,
            phase_rate: None,
        }
    }

    pub fn finetune_config(&self, mode: FinetuneMode, model: ModelConfig) -> FinetuneConfig {
        FinetuneConfig {
            mode,
            few_shot_fraction: self.few_shot_fraction,
            rank: self.rank,
            alpha: self.alpha,
            policy: FreezePolicy {
                train_decoder: self.train_decoder,
                train_memory: self.train_memory,
                train_head: self.train_head,
            },
            train: self.train_config(model),
        }
    }

    /// Checks every derived configuration that does not need data.
    pub fn validate(&self) -> Result<()> {
        let probe = ModelConfig {
            clip_len: self.clip_len,
            conv_channels: self.conv_channels,
            dim: self.dim,
            slots: self.slots,
            ..ModelConfig::default()
        };
        self.train_config(probe).validate()?;
        if !(0.0..=1.0).contains(&self.fuse_weight) {
            return Err(config_err(format!("fuse_weight must lie in [0, 1], got {}", self.fuse_weight)));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(config_err(format!("window must be odd and at least 3, got {}", self.window)));
        }
        if !(self.few_shot_fraction > 0.0 && self.few_shot_fraction <= 1.0) {
            return Err(config_err(format!(
                "few_shot_fraction must lie in (0, 1], got {}",
                self.few_shot_fraction
            )));
        }
        if self.rank == 0 || !(self.alpha > 0.0) {
            return Err(config_err("rank and alpha must be positive".into()));
        }
        Ok(())
    }
}
