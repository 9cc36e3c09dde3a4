//! Procedural periodic device scenes with labelled anomalies and nuisances.
//!
//! A scenario is `num_cycles_train + num_cycles_test` cycles of one device.
//! The train split is always anomaly-free. Anomalies re-render frames of the
//! test split from the scenario spec; nuisances post-process pixels and never
//! touch labels.

mod io;
pub mod presets;
pub mod render;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{read_dataset, read_pnm, write_dataset, write_pnm, MANIFEST_FILE};
pub use render::{device_region, render_frame, DeviceState, Region, SUB_ACTIONS};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_T_MAX: usize = 20;

const STREAM_JITTER: u64 = 2 << 40;

/// Independent ChaCha stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Oscillator,
    Conveyor,
    Rotator,
    Sorter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainStyle {
    #[default]
    Synthetic,
    Realish,
}

macro_rules! snake_enum {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(Self::$variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} {other:?}", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

snake_enum!(DeviceKind { Oscillator => "oscillator", Conveyor => "conveyor", Rotator => "rotator", Sorter => "sorter" });
snake_enum!(DomainStyle { Synthetic => "synthetic", Realish => "realish" });

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub device_kind: DeviceKind,
    /// Frames per cycle.
    pub period_len: usize,
    pub num_cycles_train: usize,
    pub num_cycles_test: usize,
    /// Square frame edge in pixels; must be a multiple of 16.
    pub frame_size: usize,
    pub domain_style: DomainStyle,
    /// Number of phase classes.
    pub t_max: usize,
    pub rng_seed: u64,
}

impl ScenarioSpec {
    pub fn new(name: &str, device_kind: DeviceKind, period_len: usize, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            device_kind,
            period_len,
            num_cycles_train: 4,
            num_cycles_test: 2,
            frame_size: 64,
            domain_style: DomainStyle::Synthetic,
            t_max: DEFAULT_T_MAX,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.period_len < 4 {
            return bad(format!("period_len must be at least 4, got {}", self.period_len));
        }
        if self.frame_size < 16 || self.frame_size % 16 != 0 {
            return bad(format!("frame_size must be a multiple of 16 and at least 16, got {}", self.frame_size));
        }
        if self.num_cycles_train == 0 || self.num_cycles_test == 0 {
            return bad("cycle counts must be at least 1".into());
        }
        if self.t_max < 2 {
            return bad(format!("t_max must be at least 2, got {}", self.t_max));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("scenario name {:?} is not a valid directory name", self.name));
        }
        Ok(())
    }

    pub fn num_train(&self) -> usize {
        self.num_cycles_train * self.period_len
    }

    pub fn num_test(&self) -> usize {
        self.num_cycles_test * self.period_len
    }

    pub fn num_frames(&self) -> usize {
        self.num_train() + self.num_test()
    }

    /// Nominal cycle position of frame `f`.
    pub fn nominal_phase(&self, f: usize) -> f64 {
        (f % self.period_len) as f64 / self.period_len as f64
    }

    /// Phase class of a cycle position.
    pub fn phase_class(&self, phase: f64) -> usize {
        let p = phase.rem_euclid(1.0);
        ((p * self.t_max as f64).floor() as usize).min(self.t_max - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyFamily {
    Appearance,
    Position,
    Motion,
    Logic,
}

impl AnomalyFamily {
    pub const ALL: [AnomalyFamily; 4] = [Self::Appearance, Self::Position, Self::Motion, Self::Logic];
}

snake_enum!(AnomalyFamily { Appearance => "appearance", Position => "position", Motion => "motion", Logic => "logic" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    /// Cycle runs `1 + magnitude` times faster.
    #[default]
    Speedup,
    /// Device holds the pose of the first frame.
    Freeze,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub family: AnomalyFamily,
    pub start_frame: usize,
    pub end_frame: usize,
    pub magnitude: f64,
    /// Only read for [`AnomalyFamily::Motion`].
    #[serde(default)]
    pub motion: MotionKind,
}

impl AnomalySpec {
    pub fn new(family: AnomalyFamily, start_frame: usize, end_frame: usize, magnitude: f64) -> Self {
        Self {
            family,
            start_frame,
            end_frame,
            magnitude,
            motion: MotionKind::Speedup,
        }
    }

    pub fn freeze(start_frame: usize, end_frame: usize) -> Self {
        Self {
            motion: MotionKind::Freeze,
            ..Self::new(AnomalyFamily::Motion, start_frame, end_frame, 1.0)
        }
    }

    fn covers(&self, f: usize) -> bool {
        (self.start_frame..self.end_frame).contains(&f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceKind {
    LightingRamp,
    CameraJitter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    pub kind: NuisanceKind,
    pub start_frame: usize,
    pub end_frame: usize,
    pub magnitude: f64,
}

impl NuisanceSpec {
    fn covers(&self, f: usize) -> bool {
        (self.start_frame..self.end_frame).contains(&f)
    }

    /// Largest translation camera jitter applies, in pixels.
    pub fn max_jitter(&self) -> i64 {
        (self.magnitude * 4.0).ceil() as i64
    }
}

/// An 8-bit image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn mean_intensity(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub scenario_id: String,
    /// Generator settings, including the seed, that produced the frames.
    pub spec: ScenarioSpec,
    pub period_len: usize,
    pub t_max: usize,
    pub num_train: usize,
    pub num_test: usize,
    /// One entry per test frame, in order: 0 normal, 1 abnormal.
    pub labels: Vec<u8>,
    /// Rendered phase class of every frame.
    pub phase_labels: Vec<usize>,
    pub anomalies: Vec<AnomalySpec>,
    pub nuisances: Vec<NuisanceSpec>,
}

impl DatasetManifest {
    pub fn num_frames(&self) -> usize {
        self.num_train + self.num_test
    }

    pub fn split_of(&self, f: usize) -> Split {
        if f < self.num_train {
            Split::Train
        } else {
            Split::Test
        }
    }

    pub fn label(&self, f: usize) -> Option<u8> {
        f.checked_sub(self.num_train).and_then(|i| self.labels.get(i).copied())
    }

    /// Anomaly family of frame `f`, if any anomaly covers it.
    pub fn family_of(&self, f: usize) -> Option<AnomalyFamily> {
        self.anomalies.iter().find(|a| a.covers(f)).map(|a| a.family)
    }

    /// Test frames touched by a nuisance and by no anomaly.
    pub fn nuisance_only_test_frames(&self) -> Vec<usize> {
        (self.num_train..self.num_frames())
            .filter(|&f| self.nuisances.iter().any(|n| n.covers(f)) && self.family_of(f).is_none())
            .collect()
    }

    /// Expected phase increment per frame.
    pub fn phase_rate(&self) -> f64 {
        self.t_max as f64 / self.period_len as f64
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_frames();
        if self.labels.len() != self.num_test {
            return Err(Error::Manifest(format!(
                "{} labels for {} test frames",
                self.labels.len(),
                self.num_test
            )));
        }
        if self.phase_labels.len() != n {
            return Err(Error::Manifest(format!("{} phase labels for {n} frames", self.phase_labels.len())));
        }
        if let Some(p) = self.phase_labels.iter().find(|&&p| p >= self.t_max) {
            return Err(Error::Manifest(format!("phase label {p} outside [0, {})", self.t_max)));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l > 1) {
            return Err(Error::Manifest(format!("label {l} is neither 0 nor 1")));
        }
        if self.spec.num_train() != self.num_train || self.spec.num_test() != self.num_test {
            return Err(Error::Manifest("split sizes disagree with the scenario spec".into()));
        }
        Ok(())
    }
}

/// Frames plus their manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn train_frames(&self) -> &[Frame] {
        &self.frames[..self.manifest.num_train]
    }

    pub fn test_frames(&self) -> &[Frame] {
        &self.frames[self.manifest.num_train..]
    }
}

/// Renders the clean, exactly periodic scenario.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.num_frames();
    let frames = (0..n)
        .map(|f| render_frame(spec, f, &DeviceState::nominal(spec.nominal_phase(f))))
        .collect();
    let phase_labels = (0..n).map(|f| spec.phase_class(spec.nominal_phase(f))).collect();
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        scenario_id: spec.name.clone(),
        spec: spec.clone(),
        period_len: spec.period_len,
        t_max: spec.t_max,
        num_train: spec.num_train(),
        num_test: spec.num_test(),
        labels: vec![0; spec.num_test()],
        phase_labels,
        anomalies: Vec::new(),
        nuisances: Vec::new(),
    };
    Ok(Dataset { frames, manifest })
}

fn check_interval(start: usize, end: usize, len: usize) -> Result<()> {
    if start >= end {
        return Err(Error::Interval {
            start,
            end,
            reason: "start must precede end".into(),
        });
    }
    if end > len {
        return Err(Error::Interval {
            start,
            end,
            reason: format!("scenario has only {len} frames"),
        });
    }
    Ok(())
}

fn check_magnitude(m: f64, allow_zero: bool) -> Result<()> {
    let ok = m.is_finite() && m <= 1.0 && (m > 0.0 || (allow_zero && m == 0.0));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("magnitude must lie in (0, 1], got {m}")))
    }
}

/// Device state of frame `f` under anomaly `a`.
fn anomalous_state(spec: &ScenarioSpec, a: &AnomalySpec, f: usize) -> DeviceState {
    let nominal = spec.nominal_phase(f);
    let m = a.magnitude;
    match a.family {
        AnomalyFamily::Appearance => DeviceState {
            intensity: 1.0 - 0.6 * m,
            ..DeviceState::nominal(nominal)
        },
        AnomalyFamily::Position => DeviceState {
            offset: (0.0, (2.0 + 6.0 * m).round()),
            ..DeviceState::nominal(nominal)
        },
        AnomalyFamily::Motion => {
            let p0 = spec.nominal_phase(a.start_frame);
            let elapsed = (f - a.start_frame) as f64 / spec.period_len as f64;
            let phase = match a.motion {
                MotionKind::Freeze => p0,
                MotionKind::Speedup => p0 + elapsed * (1.0 + m),
            };
            DeviceState::nominal(phase.rem_euclid(1.0))
        }
        AnomalyFamily::Logic => {
            // sub-actions (A, B, C) rendered as (A, C, B)
            const ORDER: [usize; SUB_ACTIONS] = [0, 2, 1];
            let s = nominal * SUB_ACTIONS as f64;
            let stage = (s.floor() as usize).min(SUB_ACTIONS - 1);
            let phase = (ORDER[stage] as f64 + (s - stage as f64)) / SUB_ACTIONS as f64;
            DeviceState::nominal(phase)
        }
    }
}

/// Re-renders the interval of `a` with the anomaly, labels it abnormal and
/// records the rendered phase classes. Nuisances already recorded in the
/// manifest are re-applied to the re-rendered frames.
pub fn inject_anomaly(ds: &mut Dataset, a: &AnomalySpec) -> Result<()> {
    let m = &ds.manifest;
    check_interval(a.start_frame, a.end_frame, m.num_frames())?;
    if a.start_frame < m.num_train {
        return Err(Error::Interval {
            start: a.start_frame,
            end: a.end_frame,
            reason: "anomalies may only be injected into the test split".into(),
        });
    }
    check_magnitude(a.magnitude, false)?;
    if let Some(o) = m
        .anomalies
        .iter()
        .find(|o| o.start_frame < a.end_frame && a.start_frame < o.end_frame)
    {
        return Err(Error::Interval {
            start: a.start_frame,
            end: a.end_frame,
            reason: format!("overlaps anomaly [{}, {})", o.start_frame, o.end_frame),
        });
    }
    let spec = m.spec.clone();
    for f in a.start_frame..a.end_frame {
        let state = anomalous_state(&spec, a, f);
        let mut frame = render_frame(&spec, f, &state);
        for (i, n) in ds.manifest.nuisances.iter().enumerate() {
            if n.covers(f) {
                nuisance_frame(&mut frame, spec.rng_seed, i, n, f);
            }
        }
        ds.frames[f] = frame;
        ds.manifest.phase_labels[f] = spec.phase_class(state.phase);
        ds.manifest.labels[f - ds.manifest.num_train] = 1;
    }
    ds.manifest.anomalies.push(*a);
    Ok(())
}

fn nuisance_frame(frame: &mut Frame, seed: u64, index: usize, n: &NuisanceSpec, f: usize) {
    match n.kind {
        NuisanceKind::LightingRamp => {
            let len = (n.end_frame - n.start_frame) as f64;
            let k = n.magnitude * 0.5 * (f - n.start_frame + 1) as f64 / len;
            for p in &mut frame.pixels {
                let v = *p as f64;
                *p = (v + (255.0 - v) * k).round().min(255.0) as u8;
            }
        }
        NuisanceKind::CameraJitter => {
            let j = n.max_jitter();
            if j == 0 {
                return;
            }
            let mut rng = substream(seed, STREAM_JITTER | ((index as u64) << 24) | f as u64);
            let (dx, dy) = loop {
                let d = (rng.random_range(-j..=j), rng.random_range(-j..=j));
                if d != (0, 0) {
                    break d;
                }
            };
            let (w, h, c) = (frame.width as i64, frame.height as i64, frame.channels);
            let src = frame.pixels.clone();
            for y in 0..h {
                let sy = (y - dy).clamp(0, h - 1);
                for x in 0..w {
                    let sx = (x - dx).clamp(0, w - 1);
                    for ch in 0..c {
                        frame.pixels[((y * w + x) as usize) * c + ch] = src[((sy * w + sx) as usize) * c + ch];
                    }
                }
            }
        }
    }
}

/// Applies a labelled-normal nuisance to its interval and records it.
pub fn apply_nuisance(ds: &mut Dataset, n: &NuisanceSpec) -> Result<()> {
    check_interval(n.start_frame, n.end_frame, ds.manifest.num_frames())?;
    check_magnitude(n.magnitude, true)?;
    if n.magnitude == 0.0 {
        return Ok(());
    }
    let index = ds.manifest.nuisances.len();
    let seed = ds.manifest.spec.rng_seed;
    for f in n.start_frame..n.end_frame {
        nuisance_frame(&mut ds.frames[f], seed, index, n, f);
    }
    ds.manifest.nuisances.push(*n);
    Ok(())
}

/// Frame indices whose pixels differ between two datasets.
pub fn differing_frames(a: &[Frame], b: &[Frame]) -> BTreeSet<usize> {
    a.iter()
        .zip(b)
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: DeviceKind, period: usize) -> ScenarioSpec {
        ScenarioSpec {
            num_cycles_train: 2,
            num_cycles_test: 1,
            ..ScenarioSpec::new("t", kind, period, 7)
        }
    }

    #[test]
    fn oscillator_is_periodic_in_train() {
        let ds = generate_scenario(&spec(DeviceKind::Oscillator, 20)).unwrap();
        assert_eq!(ds.frames.len(), 60);
        for f in 0..40 {
            assert_eq!(ds.frames[f], ds.frames[f + 20], "frame {f}");
        }
        assert_ne!(ds.frames[0], ds.frames[1]);
    }

    #[test]
    fn all_devices_are_periodic_and_distinct_per_phase() {
        for kind in [DeviceKind::Oscillator, DeviceKind::Conveyor, DeviceKind::Rotator, DeviceKind::Sorter] {
            let mut s = spec(kind, 12);
            s.domain_style = DomainStyle::Synthetic;
            let ds = generate_scenario(&s).unwrap();
            for f in 0..24 {
                assert_eq!(ds.frames[f], ds.frames[f + 12], "{kind} frame {f}");
            }
            for a in 0..12 {
                for b in a + 1..12 {
                    assert_ne!(ds.frames[a], ds.frames[b], "{kind}: phases {a} and {b} render identically");
                }
            }
        }
    }

    #[test]
    fn conveyor_phase_labels_follow_the_formula() {
        let ds = generate_scenario(&spec(DeviceKind::Conveyor, 16)).unwrap();
        let expected: Vec<usize> = (0..16).map(|f| (f as f64 / 16.0 * 20.0).floor() as usize).collect();
        assert_eq!(&ds.manifest.phase_labels[..16], expected.as_slice());
        assert_eq!(&expected[..4], &[0, 1, 2, 3]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec(DeviceKind::Rotator, 3);
        assert!(generate_scenario(&s).is_err());
        s.period_len = 8;
        s.frame_size = 8;
        assert!(generate_scenario(&s).is_err());
        s.frame_size = 64;
        s.num_cycles_test = 0;
        assert!(generate_scenario(&s).is_err());
    }

    #[test]
    fn appearance_anomaly_is_local() {
        let clean = generate_scenario(&spec(DeviceKind::Oscillator, 20)).unwrap();
        let mut ds = clean.clone();
        inject_anomaly(&mut ds, &AnomalySpec::new(AnomalyFamily::Appearance, 45, 50, 1.0)).unwrap();
        let diff = differing_frames(&clean.frames, &ds.frames);
        assert!(!diff.is_empty());
        assert!(diff.iter().all(|f| (45..50).contains(f)));
        assert_eq!(&ds.manifest.labels[5..10], &[1; 5]);
        assert_eq!(ds.manifest.labels.iter().filter(|&&l| l == 1).count(), 5);
    }

    #[test]
    fn freeze_holds_the_first_pose() {
        let mut ds = generate_scenario(&spec(DeviceKind::Rotator, 20)).unwrap();
        inject_anomaly(&mut ds, &AnomalySpec::freeze(42, 52)).unwrap();
        for f in 42..52 {
            assert_eq!(ds.frames[f], ds.frames[42]);
        }
    }

    #[test]
    fn train_split_injection_is_rejected() {
        let mut ds = generate_scenario(&spec(DeviceKind::Rotator, 20)).unwrap();
        let err = inject_anomaly(&mut ds, &AnomalySpec::new(AnomalyFamily::Motion, 10, 15, 0.5)).unwrap_err();
        assert!(matches!(err, Error::Interval { .. }));
        assert!(ds.manifest.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn overlapping_anomalies_are_rejected() {
        let mut ds = generate_scenario(&spec(DeviceKind::Rotator, 20)).unwrap();
        inject_anomaly(&mut ds, &AnomalySpec::new(AnomalyFamily::Motion, 42, 50, 0.5)).unwrap();
        assert!(inject_anomaly(&mut ds, &AnomalySpec::new(AnomalyFamily::Logic, 48, 55, 0.5)).is_err());
    }

    #[test]
    fn zero_lighting_ramp_is_a_no_op() {
        let clean = generate_scenario(&spec(DeviceKind::Conveyor, 20)).unwrap();
        let mut ds = clean.clone();
        let n = NuisanceSpec {
            kind: NuisanceKind::LightingRamp,
            start_frame: 5,
            end_frame: 25,
            magnitude: 0.0,
        };
        apply_nuisance(&mut ds, &n).unwrap();
        assert_eq!(ds.frames, clean.frames);
    }
}
