//! Sliding-window phase inspection.
//!
//! For each target frame the predicted phases of its `n` neighbours are
//! compared to the arithmetic sequence a normal cycle would produce around the
//! centre prediction; the mean deviation `E_p` is the period error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSeries {
    /// Predicted phase per target frame.
    pub phases: Vec<usize>,
    pub t_max: usize,
    /// Window size `n`, odd and at least 3.
    pub window: usize,
}

impl PhaseSeries {
    pub fn new(phases: Vec<usize>, t_max: usize, window: usize) -> Result<Self> {
        check_window(window, phases.len())?;
        if let Some((i, &p)) = phases.iter().enumerate().find(|(_, &p)| p >= t_max) {
            return Err(Error::Config(format!("phase {p} at frame {i} is outside [0, {t_max})")));
        }
        Ok(Self { phases, t_max, window })
    }

    /// `E_p` for every frame.
    pub fn period_errors(&self, phase_rate: f64, circular: bool) -> Result<Vec<f64>> {
        (0..self.phases.len())
            .map(|t| {
                let tp = window(&self.phases, t, self.window)?;
                let b = reference(self.phases[t], self.window, self.t_max, phase_rate)?;
                period_error(&tp, &b, self.t_max, circular)
            })
            .collect()
    }
}

fn check_window(n: usize, len: usize) -> Result<()> {
    if n < 3 || n % 2 == 0 {
        return Err(Error::Config(format!("window size must be odd and at least 3, got {n}")));
    }
    if n > len {
        return Err(Error::Config(format!("window size {n} exceeds series length {len}")));
    }
    Ok(())
}

/// The `n` phases centred on frame `t`, clamping indices at the series ends.
pub fn window(series: &[usize], t: usize, n: usize) -> Result<Vec<usize>> {
    check_window(n, series.len())?;
    if t >= series.len() {
        return Err(Error::OutOfRange {
            op: "perioddet::window",
            index: t,
            limit: series.len(),
        });
    }
    let half = (n - 1) / 2;
    let last = series.len() - 1;
    Ok((0..n)
        .map(|i| {
            let idx = (t + i).saturating_sub(half).min(last);
            series[idx]
        })
        .collect())
}

/// Expected phases around `center`: `round(center + i·rate) mod t_max` for
/// `i ∈ [-(n-1)/2, (n-1)/2]`.
pub fn reference(center: usize, n: usize, t_max: usize, phase_rate: f64) -> Result<Vec<usize>> {
    if !(phase_rate > 0.0 && phase_rate.is_finite()) {
        return Err(Error::Config(format!("phase rate must be positive, got {phase_rate}")));
    }
    if n == 0 || n % 2 == 0 {
        return Err(Error::Config(format!("window size must be odd, got {n}")));
    }
    let half = ((n - 1) / 2) as i64;
    Ok((-half..=half)
        .map(|i| {
            let v = (center as f64 + i as f64 * phase_rate).round() as i64;
            v.rem_euclid(t_max as i64) as usize
        })
        .collect())
}

pub fn phase_distance(a: usize, b: usize, t_max: usize, circular: bool) -> usize {
    let d = a.abs_diff(b);
    if circular {
        d.min(t_max.saturating_sub(d))
    } else {
        d
    }
}

/// `E_p = (1/n)·Σ d(T_p[i], b[i])`.
pub fn period_error(phases: &[usize], reference: &[usize], t_max: usize, circular: bool) -> Result<f64> {
    if phases.len() != reference.len() {
        return Err(Error::shape("perioddet::period_error", &[phases.len()], &[reference.len()]));
    }
    if phases.is_empty() {
        return Ok(0.0);
    }
    let total: usize = phases
        .iter()
        .zip(reference)
        .map(|(&a, &b)| phase_distance(a, b, t_max, circular))
        .sum();
    Ok(total as f64 / phases.len() as f64)
}
