//! Synthetic N-MNIST-shaped event recordings.
//!
//! Each sample renders a stroke-based digit glyph with random per-sample
//! distortion, moves it along the three-saccade triangle path used for
//! N-MNIST, and converts the changing brightness into ON/OFF events with a
//! log-intensity contrast-threshold sensor model. Background noise events and
//! random event dropout are added on top. The files use the same 5-byte
//! record layout and directory convention as the real dataset.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use super::aer::{encode_events, Event, SENSOR_HEIGHT, SENSOR_WIDTH};
use super::dataset::{Split, NUM_DIGITS};
use crate::error::{Error, Result};

/// Generator knobs. Defaults give a 300 ms recording per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub duration_ms: u32,
    /// Log-intensity change per event.
    pub contrast: f64,
    pub contrast_jitter: f64,
    /// Std-dev of glyph control-point jitter, in glyph units.
    pub point_jitter: f64,
    /// Std-dev of rotation, radians.
    pub rotation: f64,
    pub shear: f64,
    pub max_shift_px: f64,
    /// Mean background noise events per millisecond over the whole sensor.
    pub noise_rate_per_ms: f64,
    pub dropout: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_ms: 300,
            contrast: 0.35,
            contrast_jitter: 0.05,
            point_jitter: 0.05,
            rotation: 0.2,
            shear: 0.15,
            max_shift_px: 2.0,
            noise_rate_per_ms: 2.0,
            dropout: 0.15,
        }
    }
}

type Stroke = Vec<(f64, f64)>;

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, n: usize) -> Stroke {
    (0..=n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Glyph strokes in a unit box, x to the right and y downwards.
fn glyph(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![ellipse(0.5, 0.5, 0.3, 0.45, 20)],
        1 => vec![vec![(0.35, 0.2), (0.55, 0.05), (0.55, 0.95)]],
        2 => vec![vec![
            (0.2, 0.3),
            (0.3, 0.12),
            (0.5, 0.05),
            (0.7, 0.12),
            (0.78, 0.3),
            (0.7, 0.5),
            (0.2, 0.95),
            (0.82, 0.95),
        ]],
        3 => vec![vec![
            (0.2, 0.12),
            (0.5, 0.05),
            (0.75, 0.15),
            (0.75, 0.35),
            (0.45, 0.48),
            (0.78, 0.62),
            (0.78, 0.85),
            (0.5, 0.95),
            (0.2, 0.88),
        ]],
        4 => vec![vec![(0.65, 0.95), (0.65, 0.05), (0.15, 0.65), (0.85, 0.65)]],
        5 => vec![vec![
            (0.78, 0.05),
            (0.25, 0.05),
            (0.22, 0.45),
            (0.5, 0.4),
            (0.75, 0.52),
            (0.78, 0.78),
            (0.55, 0.95),
            (0.2, 0.88),
        ]],
        6 => vec![vec![
            (0.7, 0.05),
            (0.4, 0.25),
            (0.25, 0.55),
            (0.25, 0.8),
            (0.45, 0.95),
            (0.7, 0.88),
            (0.75, 0.68),
            (0.55, 0.55),
            (0.3, 0.62),
        ]],
        7 => vec![vec![(0.2, 0.05), (0.8, 0.05), (0.4, 0.95)]],
        8 => vec![ellipse(0.5, 0.27, 0.22, 0.22, 16), ellipse(0.5, 0.71, 0.27, 0.24, 16)],
        9 => vec![ellipse(0.5, 0.3, 0.25, 0.25, 16), vec![(0.75, 0.3), (0.7, 0.95)]],
        _ => unreachable!("digit out of range"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Supersampled ink image of a distorted digit in sensor pixel coordinates.
struct InkImage {
    res: usize,
    margin: f64,
    side: usize,
    data: Vec<f64>,
}

const SUPERSAMPLE: usize = 4;
const DIGIT_HEIGHT_PX: f64 = 19.0;

impl InkImage {
    fn render(digit: u8, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let jitter = Normal::new(0.0, cfg.point_jitter).unwrap();
        let rot = Normal::new(0.0, cfg.rotation).unwrap().sample(rng);
        let shear = Normal::new(0.0, cfg.shear).unwrap().sample(rng);
        let scale = rng.gen_range(0.85..1.1) * DIGIT_HEIGHT_PX;
        let aspect = rng.gen_range(0.8..1.1);
        let shift =
            (rng.gen_range(-cfg.max_shift_px..=cfg.max_shift_px), rng.gen_range(-cfg.max_shift_px..=cfg.max_shift_px));
        let half_width = rng.gen_range(0.9..1.7);
        let (sin, cos) = rot.sin_cos();
        let centre = (SENSOR_WIDTH as f64 / 2.0, SENSOR_HEIGHT as f64 / 2.0);

        let strokes: Vec<Stroke> = glyph(digit)
            .into_iter()
            .map(|stroke| {
                stroke
                    .into_iter()
                    .map(|(gx, gy)| {
                        let x = (gx + jitter.sample(rng) - 0.5) * aspect;
                        let y = gy + jitter.sample(rng) - 0.5;
                        let x = x + shear * y;
                        let (rx, ry) = (cos * x - sin * y, sin * x + cos * y);
                        (centre.0 + shift.0 + rx * scale, centre.1 + shift.1 + ry * scale)
                    })
                    .collect()
            })
            .collect();

        let margin = 4.0;
        let side = (SENSOR_WIDTH as f64 + 2.0 * margin) as usize * SUPERSAMPLE;
        let res = SUPERSAMPLE;
        let mut data = vec![0.0; side * side];
        for r in 0..side {
            for c in 0..side {
                let p = (c as f64 / res as f64 - margin, r as f64 / res as f64 - margin);
                let mut d = f64::INFINITY;
                for stroke in &strokes {
                    for w in stroke.windows(2) {
                        d = d.min(segment_distance(p, w[0], w[1]));
                    }
                }
                // linear falloff over one pixel outside the stroke core
                data[r * side + c] = (1.0 - (d - half_width)).clamp(0.0, 1.0);
            }
        }
        Self { res, margin, side, data }
    }

    /// Bilinear ink lookup at a sensor-space point.
    fn sample(&self, x: f64, y: f64) -> f64 {
        let gx = (x + self.margin) * self.res as f64;
        let gy = (y + self.margin) * self.res as f64;
        let max = (self.side - 1) as f64;
        let gx = gx.clamp(0.0, max);
        let gy = gy.clamp(0.0, max);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.side - 1), (y0 + 1).min(self.side - 1));
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let at = |r: usize, c: usize| self.data[r * self.side + c];
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Image offset at time `t_ms`: a triangle traversed in three equal saccades.
fn saccade_offset(t_ms: f64, duration_ms: f64) -> (f64, f64) {
    const PATH: [(f64, f64); 4] = [(-1.5, -1.5), (1.5, 1.5), (1.5, -1.5), (-1.5, -1.5)];
    let leg_ms = duration_ms / 3.0;
    let leg = ((t_ms / leg_ms) as usize).min(2);
    let frac = ((t_ms - leg as f64 * leg_ms) / leg_ms).clamp(0.0, 1.0);
    let (a, b) = (PATH[leg], PATH[leg + 1]);
    (a.0 + (b.0 - a.0) * frac, a.1 + (b.1 - a.1) * frac)
}

/// Generates the event stream of one synthetic recording, sorted by time.
pub fn synth_events(digit: u8, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Event> {
    assert!(digit < NUM_DIGITS);
    let ink = InkImage::render(digit, cfg, rng);
    let n_pix = SENSOR_WIDTH * SENSOR_HEIGHT;
    let contrast_dist = Normal::new(cfg.contrast, cfg.contrast_jitter).unwrap();
    let contrast: Vec<f64> = (0..n_pix).map(|_| contrast_dist.sample(rng).max(0.05)).collect();
    let log_intensity = |x: usize, y: usize, off: (f64, f64)| {
        let v = ink.sample(x as f64 + 0.5 - off.0, y as f64 + 0.5 - off.1);
        (0.05 + 0.95 * v).ln()
    };

    let duration = f64::from(cfg.duration_ms);
    let start = saccade_offset(0.0, duration);
    let mut reference: Vec<f64> =
        (0..n_pix).map(|p| log_intensity(p % SENSOR_WIDTH, p / SENSOR_WIDTH, start)).collect();
    let noise = (cfg.noise_rate_per_ms > 0.0).then(|| Poisson::new(cfg.noise_rate_per_ms).unwrap());

    let mut events = Vec::new();
    for step in 0..cfg.duration_ms {
        let t0 = step * 1000;
        let off = saccade_offset(f64::from(step) + 1.0, duration);
        for p in 0..n_pix {
            let (x, y) = (p % SENSOR_WIDTH, p / SENSOR_WIDTH);
            let level = log_intensity(x, y, off);
            let c = contrast[p];
            while (level - reference[p]).abs() >= c {
                let polarity = u8::from(level > reference[p]);
                reference[p] += if polarity == 1 { c } else { -c };
                if rng.gen::<f64>() >= cfg.dropout {
                    let t_us = t0 + rng.gen_range(0..1000);
                    events.push(Event { x: x as u8, y: y as u8, polarity, t_us });
                }
            }
        }
        if let Some(noise) = &noise {
            let n = noise.sample(rng) as usize;
            for _ in 0..n {
                events.push(Event {
                    x: rng.gen_range(0..SENSOR_WIDTH as u8),
                    y: rng.gen_range(0..SENSOR_HEIGHT as u8),
                    polarity: rng.gen_range(0..2),
                    t_us: t0 + rng.gen_range(0..1000),
                });
            }
        }
    }
    events.sort_by_key(|e| e.t_us);
    events
}

fn sample_seed(seed: u64, split: Split, index: usize) -> u64 {
    let split_tag = match split {
        Split::Train => 0x5452_4149_4e00_0000u64,
        Split::Test => 0x5445_5354_0000_0000u64,
    };
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ split_tag ^ index as u64
}

/// Writes `count` balanced synthetic recordings to `<root>/<split>/<digit>/<index>.bin`.
/// Sample `k` is digit `k % 10`; every file depends only on `(seed, split, k)`.
pub fn write_split(root: &Path, split: Split, count: usize, seed: u64, cfg: &SynthConfig) -> Result<()> {
    let split_dir = root.join(split.dir_name());
    for d in 0..NUM_DIGITS {
        fs::create_dir_all(split_dir.join(d.to_string()))?;
    }
    (0..count).into_par_iter().try_for_each(|k| {
        let digit = (k % NUM_DIGITS as usize) as u8;
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, split, k));
        let events = synth_events(digit, cfg, &mut rng);
        let bytes = encode_events(&events)?;
        let path = split_dir.join(digit.to_string()).join(format!("{k:05}.bin"));
        fs::write(&path, bytes).map_err(|source| Error::UnreadableFile { path, source })
    })
}
