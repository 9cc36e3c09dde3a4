//! In-memory experiment drivers shared by the commands and the acceptance
//! suite.

use std::fmt::Write as _;
use std::time::Instant;

use pvad::lora::{self, FinetuneMode};
use pvad::model::{train, TrainLog, VadModel};
use pvad::scoring::{evaluate, report_from_components, test_components, AnomalyReport, EvalConfig};
use pvad::synth::{AnomalyFamily, Dataset};
use pvad::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

fn channels(ds: &Dataset) -> Result<usize> {
    ds.frames
        .first()
        .map(|f| f.channels)
        .ok_or_else(|| Error::Config("dataset has no frames".into()))
}

/// Trains one model on `ds` as configured.
pub fn train_model(cfg: &RunConfig, ds: &Dataset) -> Result<(VadModel<f32>, TrainLog)> {
    let model = cfg.model_config(&ds.manifest, channels(ds)?);
    train(ds, &cfg.train_config(model), None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub memory: bool,
    pub window: bool,
    pub auc: f64,
    /// AUC on normal frames plus logic-anomaly frames, when the test split
    /// has any.
    pub auc_logic: Option<f64>,
}

/// The 2×2 of memory on/off × sliding window on/off. The window-off rows use
/// fusion weight 0 (reconstruction only); the window-on rows use the
/// configured weight.
pub fn ablation(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(4);
    for memory in [true, false] {
        let run = RunConfig {
            use_memory: memory,
            ..cfg.clone()
        };
        let (model, _) = train_model(&run, ds)?;
        let components = test_components(&model, ds)?;
        for window in [true, false] {
            let eval = EvalConfig {
                fuse_weight: if window { cfg.fuse_weight } else { 0.0 },
                ..cfg.eval_config()
            };
            let r = report_from_components(&components, ds, &eval, memory)?;
            rows.push(AblationRow {
                memory,
                window,
                auc: r.auc,
                auc_logic: r.auc_per_family.get(&AnomalyFamily::Logic).copied(),
            });
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("memory,window,auc,auc_logic\n");
    for r in rows {
        let logic = r.auc_logic.map_or(String::new(), |v| format!("{v:.6}"));
        let _ = writeln!(out, "{},{},{:.6},{logic}", r.memory, r.window, r.auc);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRow {
    /// `pretrained`, `full` or `peft`.
    pub variant: String,
    pub trainable_params: usize,
    pub total_params: usize,
    pub steps: u64,
    pub wall_seconds: f64,
    pub auc: f64,
}

/// Result of one finetuning run, kept for writing artifacts.
pub struct FinetuneRun {
    pub mode: FinetuneMode,
    pub model: VadModel<f32>,
    pub log: TrainLog,
    pub report: AnomalyReport,
}

/// Finetunes `pretrained` on the leading `few_shot_fraction` of the target
/// train split in the given mode and evaluates on the target test split.
pub fn finetune_run(cfg: &RunConfig, pretrained: &VadModel<f32>, target: &Dataset, mode: FinetuneMode) -> Result<FinetuneRun> {
    let ft = cfg.finetune_config(mode, pretrained.config);
    let (model, log) = lora::finetune(pretrained, target, &ft, None)?;
    let report = evaluate(&model, target, &cfg.eval_config())?;
    Ok(FinetuneRun { mode, model, log, report })
}

/// Pretrained-only, full and PEFT rows on the target scenario.
pub fn finetune_comparison(
    cfg: &RunConfig,
    pretrained: &VadModel<f32>,
    target: &Dataset,
) -> Result<(Vec<FinetuneRow>, Vec<FinetuneRun>)> {
    let total = pretrained.count_params(false);
    let base = evaluate(pretrained, target, &cfg.eval_config())?;
    let mut rows = vec![FinetuneRow {
        variant: "pretrained".into(),
        trainable_params: 0,
        total_params: total,
        steps: 0,
        wall_seconds: 0.0,
        auc: base.auc,
    }];
    let mut runs = Vec::new();
    for mode in [FinetuneMode::Full, FinetuneMode::Peft] {
        let run = finetune_run(cfg, pretrained, target, mode)?;
        rows.push(FinetuneRow {
            variant: match mode {
                FinetuneMode::Full => "full".into(),
                FinetuneMode::Peft => "peft".into(),
            },
            trainable_params: run.log.trainable_params,
            total_params: run.model.count_params(false),
            steps: run.log.steps,
            wall_seconds: run.log.wall_seconds,
            auc: run.report.auc,
        });
        runs.push(run);
    }
    Ok((rows, runs))
}

pub fn finetune_csv(rows: &[FinetuneRow]) -> String {
    let mut out = String::from("variant,trainable_params,total_params,steps,wall_seconds,auc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.3},{:.6}",
            r.variant, r.trainable_params, r.total_params, r.steps, r.wall_seconds, r.auc
        );
    }
    out
}

/// Wall-clock seconds of `f`.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}
