//! The five subcommands, operating on directories.

use std::fs;
use std::path::{Path, PathBuf};

use pvad::lora::{self, FinetuneMode};
use pvad::model::{VadModel, CHECKPOINT_FILE, TRAIN_LOG_FILE};
use pvad::scoring::{report_from_components, test_components, AnomalyReport};
use pvad::synth::{presets, read_dataset, write_dataset, Dataset};
use pvad::{Error, Result};

use crate::config::RunConfig;
use crate::experiments::{ablation, ablation_csv, finetune_comparison, finetune_csv, train_model, AblationRow, FinetuneRow};

pub const REPORT_FILE: &str = "report.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const ADAPTER_FILE: &str = "adapter.bin";
pub const MERGED_FILE: &str = "merged.bin";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Creates `dir`, refusing to reuse a non-empty directory so earlier runs are
/// never overwritten.
pub fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::Config(format!(
                "output directory {} is not empty; choose a new one",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io(path, e))
}

/// Writes every dataset of the configured preset to `<out>/<scenario_id>/`.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let datasets = presets::by_name(&cfg.preset, cfg.seed)?;
    fresh_dir(out)?;
    let mut dirs = Vec::new();
    for ds in &datasets {
        let dir = out.join(&ds.manifest.scenario_id);
        write_dataset(ds, &dir)?;
        dirs.push(dir);
    }
    cfg.write_resolved(out)?;
    Ok(dirs)
}

/// Trains on `data` and writes the checkpoint, loss log and resolved config.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    cfg.validate()?;
    let ds = read_dataset(data)?;
    fresh_dir(out)?;
    cfg.write_resolved(out)?;
    let (model, log) = train_model(cfg, &ds)?;
    model.save(&out.join(CHECKPOINT_FILE))?;
    write(&out.join(TRAIN_LOG_FILE), &log.to_csv())
}

/// Loads a full checkpoint, optionally with an adapter checkpoint on top.
pub fn load_model(checkpoint: &Path, adapter: Option<&Path>) -> Result<VadModel<f32>> {
    let base = VadModel::<f32>::load(checkpoint)?;
    match adapter {
        None => Ok(base),
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| io(p, e))?;
            lora::apply_adapter_bytes(&base, &bytes)
        }
    }
}

fn write_report(dir: &Path, report: &AnomalyReport) -> Result<()> {
    report.write_json(&dir.join(REPORT_FILE))?;
    report.write_csv(&dir.join(SCORES_FILE))
}

/// Scores the test split of `data`: `scores.csv`, `report.json` and, with
/// `dump_trace`, the per-clip addressing trace.
pub fn cmd_eval(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    adapter: Option<&Path>,
    out: &Path,
    dump_trace: bool,
) -> Result<AnomalyReport> {
    cfg.validate()?;
    let ds = read_dataset(data)?;
    let model = load_model(checkpoint, adapter)?;
    fresh_dir(out)?;
    cfg.write_resolved(out)?;
    let components = test_components(&model, &ds)?;
    let report = report_from_components(&components, &ds, &cfg.eval_config(), model.config.use_memory)?;
    write_report(out, &report)?;
    if dump_trace {
        write(&out.join(TRACE_FILE), &components.trace_csv())?;
    }
    Ok(report)
}

/// Full and adapter finetuning of a pretrained checkpoint on `data`, plus the
/// pretrained model's own score, as `comparison.csv`. Each variant gets a
/// subdirectory with its weights, loss log and report; with `merge` the
/// adapter is also folded into a standalone checkpoint.
pub fn cmd_finetune(cfg: &RunConfig, data: &Path, checkpoint: &Path, out: &Path, merge: bool) -> Result<Vec<FinetuneRow>> {
    cfg.validate()?;
    let target = read_dataset(data)?;
    let pretrained = VadModel::<f32>::load(checkpoint)?;
    fresh_dir(out)?;
    cfg.write_resolved(out)?;
    let (rows, runs) = finetune_comparison(cfg, &pretrained, &target)?;
    for run in &runs {
        let dir = out.join(match run.mode {
            FinetuneMode::Full => "full",
            FinetuneMode::Peft => "peft",
        });
        fresh_dir(&dir)?;
        match run.mode {
            FinetuneMode::Full => run.model.save(&dir.join(CHECKPOINT_FILE))?,
            FinetuneMode::Peft => {
                let path = dir.join(ADAPTER_FILE);
                fs::write(&path, lora::adapter_bytes(&run.model)?).map_err(|e| io(&path, e))?;
                if merge {
                    lora::merge(&run.model)?.save(&dir.join(MERGED_FILE))?;
                }
            }
        }
        write(&dir.join(TRAIN_LOG_FILE), &run.log.to_csv())?;
        write_report(&dir, &run.report)?;
    }
    write(&out.join(COMPARISON_FILE), &finetune_csv(&rows))?;
    Ok(rows)
}

/// Trains with and without the memory and scores each with and without the
/// sliding window.
pub fn cmd_ablate(cfg: &RunConfig, data: &Path, out: &Path) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let ds: Dataset = read_dataset(data)?;
    fresh_dir(out)?;
    cfg.write_resolved(out)?;
    let rows = ablation(cfg, &ds)?;
    write(&out.join(ABLATION_FILE), &ablation_csv(&rows))?;
    Ok(rows)
}
