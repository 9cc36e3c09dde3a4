//! Named scenarios with fixed anomaly and nuisance layouts.
//!
//! Every preset uses period 20, 80 train cycles and 20 test cycles of 64×64
//! frames. Intervals below are given relative to the first test frame.

use super::{
    apply_nuisance, generate_scenario, inject_anomaly, AnomalyFamily, AnomalySpec, Dataset, DeviceKind,
    DomainStyle, NuisanceKind, NuisanceSpec, ScenarioSpec,
};
use crate::error::{Error, Result};

pub const PRESET_NAMES: [&str; 3] = ["oscillator-64", "sorter-64", "shift-pair"];

const PERIOD: usize = 20;
const TRAIN_CYCLES: usize = 80;
const TEST_CYCLES: usize = 20;

#[derive(Debug, Clone, Copy)]
enum Event {
    Anomaly(AnomalyFamily, usize, usize, f64),
    Freeze(usize, usize),
    Nuisance(NuisanceKind, usize, usize, f64),
}

use AnomalyFamily::{Appearance, Logic, Motion, Position};
use NuisanceKind::{CameraJitter, LightingRamp};

/// Train-split nuisances, absolute frame indices.
const TRAIN_NUISANCES: [(NuisanceKind, usize, usize, f64); 4] = [
    (LightingRamp, 200, 240, 0.6),
    (CameraJitter, 500, 530, 0.5),
    (LightingRamp, 900, 960, 1.0),
    (CameraJitter, 1200, 1240, 0.5),
];

const OSCILLATOR_TEST: [Event; 9] = [
    Event::Freeze(26, 38),
    Event::Anomaly(Logic, 67, 80, 1.0),
    Event::Nuisance(LightingRamp, 100, 130, 0.8),
    Event::Anomaly(Motion, 143, 157, 1.0),
    Event::Anomaly(Logic, 187, 200, 1.0),
    Event::Nuisance(CameraJitter, 220, 245, 0.5),
    Event::Freeze(264, 276),
    Event::Anomaly(Logic, 307, 320, 1.0),
    Event::Anomaly(Motion, 343, 356, 1.0),
];

const SORTER_TEST: [Event; 11] = [
    Event::Anomaly(Logic, 27, 40, 1.0),
    Event::Anomaly(Appearance, 64, 72, 0.8),
    Event::Anomaly(Logic, 107, 120, 1.0),
    Event::Nuisance(LightingRamp, 125, 155, 0.8),
    Event::Anomaly(Logic, 167, 180, 1.0),
    Event::Freeze(204, 214),
    Event::Anomaly(Logic, 227, 240, 1.0),
    Event::Nuisance(CameraJitter, 245, 270, 0.5),
    Event::Anomaly(Position, 284, 292, 1.0),
    Event::Anomaly(Logic, 307, 320, 1.0),
    Event::Anomaly(Logic, 367, 380, 1.0),
];

fn spec(name: &str, kind: DeviceKind, style: DomainStyle, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        num_cycles_train: TRAIN_CYCLES,
        num_cycles_test: TEST_CYCLES,
        domain_style: style,
        ..ScenarioSpec::new(name, kind, PERIOD, seed)
    }
}

fn build(spec: &ScenarioSpec, events: &[Event]) -> Result<Dataset> {
    let mut ds = generate_scenario(spec)?;
    for &(kind, start_frame, end_frame, magnitude) in &TRAIN_NUISANCES {
        apply_nuisance(
            &mut ds,
            &NuisanceSpec {
                kind,
                start_frame,
                end_frame,
                magnitude,
            },
        )?;
    }
    let base = spec.num_train();
    // nuisances first so anomalies re-rendered inside them stay consistent
    for e in events {
        if let Event::Nuisance(kind, s, t, magnitude) = *e {
            let n = NuisanceSpec {
                kind,
                start_frame: base + s,
                end_frame: base + t,
                magnitude,
            };
            apply_nuisance(&mut ds, &n)?;
        }
    }
    for e in events {
        let a = match *e {
            Event::Anomaly(family, s, t, m) => AnomalySpec::new(family, base + s, base + t, m),
            Event::Freeze(s, t) => AnomalySpec::freeze(base + s, base + t),
            Event::Nuisance(..) => continue,
        };
        inject_anomaly(&mut ds, &a)?;
    }
    Ok(ds)
}

/// Fast scenario: oscillating bar with freeze, speed-up and logic anomalies.
pub fn oscillator_64(seed: u64) -> Result<Dataset> {
    build(&spec("oscillator-64", DeviceKind::Oscillator, DomainStyle::Synthetic, seed), &OSCILLATOR_TEST)
}

/// Three-stage sorter dominated by sub-action order anomalies.
pub fn sorter_64(seed: u64) -> Result<Dataset> {
    build(&spec("sorter-64", DeviceKind::Sorter, DomainStyle::Synthetic, seed), &SORTER_TEST)
}

/// The same rotator scene rendered in the synthetic and the realish style.
pub fn shift_pair(seed: u64) -> Result<(Dataset, Dataset)> {
    let source = build(&spec("shift-source", DeviceKind::Rotator, DomainStyle::Synthetic, seed), &OSCILLATOR_TEST)?;
    let target = build(&spec("shift-target", DeviceKind::Rotator, DomainStyle::Realish, seed), &OSCILLATOR_TEST)?;
    Ok((source, target))
}

/// All datasets a preset produces.
pub fn by_name(name: &str, seed: u64) -> Result<Vec<Dataset>> {
    match name {
        "oscillator-64" => Ok(vec![oscillator_64(seed)?]),
        "sorter-64" => Ok(vec![sorter_64(seed)?]),
        "shift-pair" => {
            let (s, t) = shift_pair(seed)?;
            Ok(vec![s, t])
        }
        other => Err(Error::Config(format!(
            "unknown preset {other:?} (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}
