//! Frame-level anomaly scores, scenario-wide normalization and ROC AUC.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::model::{clip_at, dataset_tensor, VadModel};
use crate::perioddet::PhaseSeries;
use crate::synth::{AnomalyFamily, Dataset};
use crate::tensor::Tensor;

pub const DEFAULT_FUSE_WEIGHT: f64 = 0.5;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Per-frame mean squared error of a `[T, H, W]` clip against its
/// reconstruction.
pub fn recon_error<S: Scalar>(clip: &Tensor<S>, recon: &Tensor<S>) -> Result<Vec<f64>> {
    clip.check_same("scoring::recon_error", recon)?;
    let t = *clip.shape().first().unwrap_or(&0);
    if t == 0 {
        return Ok(Vec::new());
    }
    let per = clip.len() / t;
    Ok(clip
        .data()
        .chunks(per)
        .zip(recon.data().chunks(per))
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = (x - y).as_f64();
                    d * d
                })
                .sum::<f64>()
                / per as f64
        })
        .collect())
}

/// Averages per-frame errors over all overlapping clips that cover a frame.
#[derive(Debug, Clone)]
pub struct OverlapAverager {
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl OverlapAverager {
    pub fn new(frames: usize) -> Self {
        Self {
            sums: vec![0.0; frames],
            counts: vec![0; frames],
        }
    }

    /// Adds the per-frame errors of a clip starting at `start`.
    pub fn add(&mut self, start: usize, errors: &[f64]) -> Result<()> {
        if start + errors.len() > self.sums.len() {
            return Err(Error::OutOfRange {
                op: "OverlapAverager::add",
                index: start + errors.len(),
                limit: self.sums.len(),
            });
        }
        for (i, &e) in errors.iter().enumerate() {
            self.sums[start + i] += e;
            self.counts[start + i] += 1;
        }
        Ok(())
    }

    /// Mean per frame; frames no clip covered get 0.
    pub fn finish(self) -> Vec<f64> {
        self.sums
            .into_iter()
            .zip(self.counts)
            .map(|(s, c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }
}

/// Min-max scaling to `[0, 1]`; a constant series maps to zeros.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - lo) / range).collect()
}

/// `(1-λ)·minmax(recon) + λ·minmax(period)`.
pub fn fuse(recon: &[f64], period: &[f64], weight: f64) -> Result<Vec<f64>> {
    if recon.len() != period.len() {
        return Err(Error::shape("scoring::fuse", &[recon.len()], &[period.len()]));
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::Config(format!("fusion weight must lie in [0, 1], got {weight}")));
    }
    let r = min_max(recon);
    let p = min_max(period);
    Ok(r.iter().zip(&p).map(|(&a, &b)| (1.0 - weight) * a + weight * b).collect())
}

/// Min-max over one scenario's entire concatenated test set.
pub fn normalize_scores(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::Config("cannot normalize an empty score series".into()));
    }
    Ok(min_max(raw))
}

/// ROC AUC as the Mann-Whitney statistic with ties counted one half,
/// computed from mid-ranks after one sort.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("scoring::auc", &[scores.len()], &[labels.len()]));
    }
    if let Some(v) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("score {v} passed to auc")));
    }
    let positives = labels.iter().filter(|&&l| l != 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, using 1-based mid-ranks, kept integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, mid-rank (i+j+2)/2
        let twice_mid = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] != 0).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let p = positives as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok((twice_u as f64 / 2.0) / (positives as f64 * negatives as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame_index: usize,
    pub recon_error: f64,
    pub period_error: f64,
    pub raw_score: f64,
    pub norm_score: f64,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<AnomalyFamily>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub fuse_weight: f64,
    pub window: usize,
    pub circular: bool,
    pub phase_rate: f64,
    pub use_memory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub schema_version: u32,
    pub scenario_id: String,
    pub auc: f64,
    /// AUC on normal frames plus the frames of one anomaly family.
    pub auc_per_family: BTreeMap<AnomalyFamily, f64>,
    pub phase_accuracy_normal: f64,
    pub settings: EvalSettings,
    pub frames: Vec<FrameScore>,
}

impl AnomalyReport {
    /// Assembles the report from per-frame components.
    pub fn build(
        scenario_id: &str,
        settings: EvalSettings,
        first_frame: usize,
        recon: &[f64],
        period: &[f64],
        labels: &[u8],
        families: &[Option<AnomalyFamily>],
        phase_accuracy_normal: f64,
    ) -> Result<Self> {
        if labels.len() != recon.len() || families.len() != recon.len() {
            return Err(Error::shape("AnomalyReport::build", &[recon.len()], &[labels.len(), families.len()]));
        }
        let raw = fuse(recon, period, settings.fuse_weight)?;
        let norm = normalize_scores(&raw)?;
        let total = auc(&norm, labels)?;
        let mut auc_per_family = BTreeMap::new();
        for fam in AnomalyFamily::ALL {
            let idx: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == 0 || families[i] == Some(fam))
                .collect();
            let s: Vec<f64> = idx.iter().map(|&i| norm[i]).collect();
            let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            if let Ok(a) = auc(&s, &l) {
                auc_per_family.insert(fam, a);
            }
        }
        let frames = (0..recon.len())
            .map(|i| FrameScore {
                frame_index: first_frame + i,
                recon_error: recon[i],
                period_error: period[i],
                raw_score: raw[i],
                norm_score: norm[i],
                label: labels[i],
                family: families[i],
            })
            .collect();
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            scenario_id: scenario_id.to_string(),
            auc: total,
            auc_per_family,
            phase_accuracy_normal,
            settings,
            frames,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("frame_index,recon_error,period_error,raw_score,norm_score,label\n");
        for f in &self.frames {
            out.push_str(&format!(
                "{},{:.9e},{:.9e},{:.9e},{:.9e},{}\n",
                f.frame_index, f.recon_error, f.period_error, f.raw_score, f.norm_score, f.label
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Mean normalized score over the given frame offsets.
    pub fn mean_norm_score(&self, offsets: impl IntoIterator<Item = usize>) -> f64 {
        let (s, n) = offsets
            .into_iter()
            .fold((0.0, 0usize), |(s, n), i| (s + self.frames[i].norm_score, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

/// Options of [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub fuse_weight: f64,
    pub window: usize,
    pub circular: bool,
    /// Expected phase increment per frame; `None` uses `t_max / period_len`.
    pub phase_rate: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fuse_weight: DEFAULT_FUSE_WEIGHT,
            window: crate::perioddet::DEFAULT_WINDOW,
            circular: true,
            phase_rate: None,
        }
    }
}

/// Addressing summary of one test clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipTrace {
    /// First frame, relative to the test split.
    pub start: usize,
    pub phase: usize,
    pub confidence: f64,
    /// `t'_p` and `1 + P_s[t_p]`; absent when the memory is bypassed.
    pub slot: Option<usize>,
    pub boost_factor: Option<f64>,
    /// Slot with the largest normalized weight, per encoder time step.
    pub argmax_slots: Vec<usize>,
}

/// Model outputs on a test split, before fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct TestComponents {
    /// Overlap-averaged reconstruction error per test frame.
    pub recon: Vec<f64>,
    /// Predicted phase per test frame: the phase of the clip centred on the
    /// frame. Near the ends of the split the nearest clip's phase is advanced
    /// by the nominal rate times the frame's offset from that clip's centre.
    pub phases: Vec<usize>,
    pub clips: Vec<ClipTrace>,
}

impl TestComponents {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("clip_start,t_p,confidence,slot,boost_factor,argmax_slots\n");
        for c in &self.clips {
            let slots: Vec<String> = c.argmax_slots.iter().map(usize::to_string).collect();
            out.push_str(&format!(
                "{},{},{:.9e},{},{},{}\n",
                c.start,
                c.phase,
                c.confidence,
                c.slot.map_or(String::new(), |v| v.to_string()),
                c.boost_factor.map_or(String::new(), |v| format!("{v:.9e}")),
                slots.join(" ")
            ));
        }
        out
    }
}

/// `phase + shift` on the circle of `t_max` classes, rounded to a class.
pub fn extrapolate_phase(phase: usize, shift: f64, t_max: usize) -> usize {
    let p = (phase as f64 + shift).round().rem_euclid(t_max as f64) as usize;
    p % t_max
}

/// Index of the clip whose centre is frame `t`, clamped to valid starts.
pub fn centred_clip(t: usize, clip_len: usize, frames: usize) -> usize {
    t.saturating_sub(clip_len / 2).min(frames - clip_len)
}

/// Runs the model over every stride-1 clip of the test split.
pub fn test_components<S: Scalar>(model: &VadModel<S>, dataset: &Dataset) -> Result<TestComponents> {
    let m = &dataset.manifest;
    let t = model.config.clip_len;
    if m.t_max != model.config.t_max {
        return Err(Error::Config(format!(
            "dataset has t_max {} but the model predicts {} classes",
            m.t_max, model.config.t_max
        )));
    }
    let n = m.num_test;
    if n < t {
        return Err(Error::Config(format!("test split of {n} frames is shorter than one clip ({t})")));
    }
    let frames = dataset_tensor::<S>(dataset.test_frames(), model.config.contrast_norm)?;
    let mut acc = OverlapAverager::new(n);
    let mut clips = Vec::with_capacity(n - t + 1);
    for start in 0..=n - t {
        let clip = clip_at(&frames, start, t)?;
        let (recon, phase, trace) = model.reconstruct(&clip)?;
        acc.add(start, &recon_error(&clip, &recon)?)?;
        let argmax_slots = trace
            .as_ref()
            .map(|tr| {
                (0..tr.weights.rows())
                    .map(|r| {
                        let row = tr.weights.row(r);
                        (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b })
                    })
                    .collect()
            })
            .unwrap_or_default();
        clips.push(ClipTrace {
            start,
            phase: phase.phase,
            confidence: phase.confidence().as_f64(),
            slot: trace.as_ref().map(|tr| tr.slot),
            boost_factor: trace.as_ref().map(|tr| tr.boost_factor.as_f64()),
            argmax_slots,
        });
    }
    let rate = m.phase_rate();
    let phases = (0..n)
        .map(|f| {
            let c = centred_clip(f, t, n);
            let offset = f as f64 - (c + t / 2) as f64;
            extrapolate_phase(clips[c].phase, offset * rate, m.t_max)
        })
        .collect();
    Ok(TestComponents {
        recon: acc.finish(),
        phases,
        clips,
    })
}

/// Fuses precomputed components into a report.
pub fn report_from_components(
    components: &TestComponents,
    dataset: &Dataset,
    config: &EvalConfig,
    use_memory: bool,
) -> Result<AnomalyReport> {
    let m = &dataset.manifest;
    if m.labels.len() != m.num_test || m.num_test != components.recon.len() {
        return Err(Error::Manifest(format!(
            "{} labels for {} scored test frames",
            m.labels.len(),
            components.recon.len()
        )));
    }
    if !(0.0..=1.0).contains(&config.fuse_weight) {
        return Err(Error::Config(format!("fuse_weight must lie in [0, 1], got {}", config.fuse_weight)));
    }
    let rate = config.phase_rate.unwrap_or_else(|| m.phase_rate());
    let series = PhaseSeries::new(components.phases.clone(), m.t_max, config.window)?;
    let period = series.period_errors(rate, config.circular)?;
    let families: Vec<Option<AnomalyFamily>> = (m.num_train..m.num_frames()).map(|f| m.family_of(f)).collect();
    let normal: Vec<usize> = (0..m.num_test).filter(|&i| m.labels[i] == 0).collect();
    let hits = normal
        .iter()
        .filter(|&&i| components.phases[i] == m.phase_labels[m.num_train + i])
        .count();
    let phase_accuracy_normal = hits as f64 / normal.len().max(1) as f64;
    let settings = EvalSettings {
        fuse_weight: config.fuse_weight,
        window: config.window,
        circular: config.circular,
        phase_rate: rate,
        use_memory,
    };
    AnomalyReport::build(
        &m.scenario_id,
        settings,
        m.num_train,
        &components.recon,
        &period,
        &m.labels,
        &families,
        phase_accuracy_normal,
    )
}

/// Reconstruct every test clip, inspect the phase series, fuse, normalize
/// over the whole test split and compute AUC.
pub fn evaluate<S: Scalar>(model: &VadModel<S>, dataset: &Dataset, config: &EvalConfig) -> Result<AnomalyReport> {
    let c = test_components(model, dataset)?;
    report_from_components(&c, dataset, config, model.config.use_memory)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recon_error_examples() {
        let clip = Tensor::<f64>::from_vec(&[3, 2, 2], (0..12).map(|v| v as f64 / 12.0).collect()).unwrap();
        assert_eq!(recon_error(&clip, &clip).unwrap(), vec![0.0; 3]);
        let mut off = clip.clone();
        for v in &mut off.data_mut()[4..8] {
            *v += 0.1;
        }
        let e = recon_error(&clip, &off).unwrap();
        assert_eq!(e[0], 0.0);
        assert!((e[1] - 0.01).abs() < 1e-12);
        assert_eq!(e[2], 0.0);
        assert!(recon_error(&clip, &Tensor::zeros(&[3, 4])).is_err());
    }

    #[test]
    fn overlapping_clips_average() {
        let mut acc = OverlapAverager::new(4);
        acc.add(0, &[1.0, 2.0, 3.0]).unwrap();
        acc.add(1, &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(acc.clone().finish(), vec![1.0, 3.0, 4.0, 6.0]);
        assert!(acc.add(2, &[0.0; 3]).is_err());
    }

    #[test]
    fn fuse_examples() {
        let r = [1.0, 3.0, 2.0];
        let p = [0.0, 1.0, 4.0];
        assert_eq!(fuse(&r, &p, 0.0).unwrap(), min_max(&r));
        assert_eq!(fuse(&r, &p, 1.0).unwrap(), min_max(&p));
        assert_eq!(fuse(&[0.0, 1.0], &[1.0, 0.0], 0.5).unwrap(), vec![0.5, 0.5]);
        assert!(fuse(&r, &p[..2], 0.5).is_err());
        assert!(fuse(&r, &p, 1.5).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_scores(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_scores(&[5.0, 5.0]).unwrap(), vec![0.0, 0.0]);
        assert!(normalize_scores(&[]).is_err());
    }

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.8, 0.2, 0.1];
        assert_eq!(auc(&s, &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&s, &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(auc(&[0.3; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auc(&s, &[0; 4]), Err(Error::UndefinedAuc { .. })));
        assert!(auc(&[f64::NAN, 1.0], &[0, 1]).is_err());
    }
}
