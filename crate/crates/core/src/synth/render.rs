//! Parametric device renderers.
//!
//! All geometry is authored on a 64×64 canvas and scaled to the requested
//! frame size. Intensities are in `[0, 1]` until quantization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{substream, DeviceKind, DomainStyle, Frame, ScenarioSpec};

const STREAM_TEXTURE: u64 = 1;
const STREAM_NOISE: u64 = 1 << 40;

/// Number of sub-actions each cycle is split into.
pub const SUB_ACTIONS: usize = 3;

/// Noise standard deviation of the realish style, in intensity units.
pub const REALISH_NOISE_STD: f64 = 4.0 / 255.0;

/// What the renderer needs to know about one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceState {
    /// Position in the cycle, `[0, 1)`.
    pub phase: f64,
    /// Multiplier on the moving part's intensity.
    pub intensity: f64,
    /// Offset of the moving part in 64-canvas pixels.
    pub offset: (f64, f64),
}

impl DeviceState {
    pub fn nominal(phase: f64) -> Self {
        Self {
            phase,
            intensity: 1.0,
            offset: (0.0, 0.0),
        }
    }
}

/// Rectangle `[x0, x1) × [y0, y1)` in frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

/// Area the moving part of a device can occupy, including the largest
/// position shift an anomaly may apply.
pub fn device_region(kind: DeviceKind, size: usize) -> Region {
    let (x0, y0, x1, y1) = match kind {
        DeviceKind::Oscillator => (10.0, 4.0, 54.0, 64.0),
        DeviceKind::Conveyor => (0.0, 26.0, 64.0, 52.0),
        DeviceKind::Rotator => (6.0, 6.0, 58.0, 64.0),
        DeviceKind::Sorter => (0.0, 6.0, 64.0, 64.0),
    };
    let k = size as f64 / 64.0;
    let px = |v: f64| ((v * k).round() as usize).min(size);
    Region {
        x0: px(x0),
        y0: px(y0),
        x1: px(x1),
        y1: px(y1),
    }
}

struct Canvas {
    size: usize,
    scale: f64,
    px: Vec<f64>,
}

impl Canvas {
    fn new(size: usize, fill: f64) -> Self {
        Self {
            size,
            scale: size as f64 / 64.0,
            px: vec![fill; size * size],
        }
    }

    /// Calls `paint(x, y)` with 64-canvas coordinates of every pixel centre
    /// inside the given 64-canvas bounding box.
    fn for_each_in(&mut self, bbox: (f64, f64, f64, f64), mut paint: impl FnMut(f64, f64) -> Option<f64>) {
        let s = self.scale;
        let lo = |v: f64| ((v * s).floor().max(0.0) as usize).min(self.size);
        let hi = |v: f64| ((v * s).ceil().max(0.0) as usize).min(self.size);
        for py in lo(bbox.1)..hi(bbox.3) {
            for px in lo(bbox.0)..hi(bbox.2) {
                let (x, y) = ((px as f64 + 0.5) / s, (py as f64 + 0.5) / s);
                if let Some(v) = paint(x, y) {
                    self.px[py * self.size + px] = v;
                }
            }
        }
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, v: f64) {
        self.for_each_in((x0, y0, x1, y1), |x, y| (x >= x0 && x < x1 && y >= y0 && y < y1).then_some(v));
    }

    fn disc(&mut self, cx: f64, cy: f64, r: f64, v: f64) {
        self.for_each_in((cx - r, cy - r, cx + r, cy + r), |x, y| {
            ((x - cx).powi(2) + (y - cy).powi(2) <= r * r).then_some(v)
        });
    }

    /// Segment with round caps of half-width `r`.
    fn capsule(&mut self, (ax, ay): (f64, f64), (bx, by): (f64, f64), r: f64, v: f64) {
        let bbox = (ax.min(bx) - r, ay.min(by) - r, ax.max(bx) + r, ay.max(by) + r);
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = (dx * dx + dy * dy).max(1e-12);
        self.for_each_in(bbox, |x, y| {
            let t = (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0);
            let (qx, qy) = (ax + t * dx, ay + t * dy);
            ((x - qx).powi(2) + (y - qy).powi(2) <= r * r).then_some(v)
        });
    }
}

fn background(spec: &ScenarioSpec) -> Vec<f64> {
    let n = spec.frame_size;
    match spec.domain_style {
        DomainStyle::Synthetic => vec![0.08; n * n],
        DomainStyle::Realish => {
            let mut rng = substream(spec.rng_seed, STREAM_TEXTURE);
            let k = 64.0 / n as f64;
            (0..n * n)
                .map(|i| {
                    let (x, y) = ((i % n) as f64 * k, (i / n) as f64 * k);
                    0.22 + 0.05 * (x * 0.45).sin() * (y * 0.3).cos() + 0.03 * ((x + y) * 0.9).sin() + rng.random_range(-0.03..0.03)
                })
                .collect()
        }
    }
}

fn draw_static(kind: DeviceKind, c: &mut Canvas, shade: f64) {
    match kind {
        DeviceKind::Oscillator => c.rect(6.0, 58.0, 58.0, 61.0, shade),
        DeviceKind::Conveyor => {
            c.rect(2.0, 53.0, 6.0, 60.0, shade);
            c.rect(58.0, 53.0, 62.0, 60.0, shade);
        }
        DeviceKind::Rotator => c.rect(28.0, 2.0, 36.0, 4.0, shade),
        DeviceKind::Sorter => {
            c.rect(0.0, 4.0, 64.0, 5.0, shade);
            c.rect(0.0, 24.0, 24.0, 25.0, shade);
            c.rect(36.0, 24.0, 64.0, 25.0, shade);
            c.rect(0.0, 40.0, 24.0, 41.0, shade);
        }
    }
}

fn draw_moving(kind: DeviceKind, c: &mut Canvas, st: &DeviceState, v: f64) {
    let tau = std::f64::consts::TAU;
    let phi = st.phase.rem_euclid(1.0);
    let (ox, oy) = st.offset;
    match kind {
        DeviceKind::Oscillator => {
            let x = 32.0 + 16.0 * (tau * phi).sin() + ox;
            let h = 17.0 + 8.0 * (tau * phi).cos();
            c.rect(x - 3.0, 32.0 - h + oy, x + 3.0, 32.0 + h + oy, v);
        }
        DeviceKind::Conveyor => {
            // belt with stripes moving twice per cycle
            c.rect(4.0, 42.0 + oy, 60.0, 50.0 + oy, 0.45 * v);
            let shift = (phi * 16.0).rem_euclid(8.0);
            let mut sx = 4.0 + shift - 8.0;
            while sx < 60.0 {
                c.rect(sx.max(4.0), 42.0 + oy, (sx + 3.0).min(60.0), 50.0 + oy, 0.7 * v);
                sx += 8.0;
            }
            let bx = 4.0 + phi * 46.0 + ox;
            c.rect(bx, 30.0 + oy, bx + 10.0, 41.0 + oy, v);
        }
        DeviceKind::Rotator => {
            let (cx, cy) = (32.0 + ox, 34.0 + oy);
            let (tx, ty) = (cx + 20.0 * (tau * phi).cos(), cy + 20.0 * (tau * phi).sin());
            c.capsule((cx, cy), (tx, ty), 2.0, 0.8 * v);
            c.disc(cx, cy, 4.5, 0.6 * v);
            c.disc(tx, ty, 4.0, v);
        }
        DeviceKind::Sorter => {
            let s = phi * SUB_ACTIONS as f64;
            let stage = (s.floor() as usize).min(SUB_ACTIONS - 1);
            let u = s - stage as f64;
            // item position and pusher top
            let (ix, iy, pusher_top) = match stage {
                0 => (4.0 + 24.0 * u, 32.0, 56.0),
                1 => (28.0, 32.0 - 18.0 * u, 40.0 - 18.0 * u),
                _ => (28.0 + 30.0 * u, 14.0, 22.0 + 34.0 * u),
            };
            c.rect(29.0 + ox, pusher_top + oy, 35.0 + ox, 60.0 + oy, 0.5 * v);
            c.rect(ix + ox, iy - 4.0 + oy, ix + 8.0 + ox, iy + 4.0 + oy, v);
        }
    }
}

/// Renders frame `index` of `spec` in the given device state.
pub fn render_frame(spec: &ScenarioSpec, index: usize, state: &DeviceState) -> Frame {
    let n = spec.frame_size;
    let mut canvas = Canvas::new(n, 0.0);
    canvas.px = background(spec);
    let (shade, bright) = match spec.domain_style {
        DomainStyle::Synthetic => (0.35, 0.9),
        DomainStyle::Realish => (0.45, 0.78),
    };
    draw_static(spec.device_kind, &mut canvas, shade);
    draw_moving(spec.device_kind, &mut canvas, state, bright * state.intensity);

    if spec.domain_style == DomainStyle::Realish {
        let mut rng = substream(spec.rng_seed, STREAM_NOISE | index as u64);
        let noise = Normal::new(0.0, REALISH_NOISE_STD).expect("valid std");
        let half = (n as f64 - 1.0) / 2.0;
        for (i, p) in canvas.px.iter_mut().enumerate() {
            let (x, y) = ((i % n) as f64 - half, (i / n) as f64 - half);
            let r2 = (x * x + y * y) / (2.0 * half * half);
            *p = *p * (1.0 - 0.35 * r2) + noise.sample(&mut rng);
        }
    }
    Frame {
        width: n,
        height: n,
        channels: 1,
        pixels: canvas.px.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
    }
}
