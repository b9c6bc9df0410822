//! Irregular brush-stroke masks.
//!
//! An attempt paints strokes, each a random walk of 8–24 straight segments
//! with uniform headings and a round brush 5–15% of the shorter image side
//! wide. Drawing stops after the first segment that brings the corrupted
//! fraction up to the requested target (or after 64 strokes), and the
//! attempt is kept only if the final fraction lies inside the target's band.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BinaryMask;
use crate::error::ensure;
use crate::{Error, Result};

const MAX_ATTEMPTS: usize = 100;
const MAX_STROKES: usize = 64;

/// Corrupted-area bands used for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskBand {
    /// 1–20% corrupted.
    Small,
    /// 20–40% corrupted.
    Medium,
    /// 40–60% corrupted.
    Large,
}

impl MaskBand {
    pub const ALL: [MaskBand; 3] = [MaskBand::Small, MaskBand::Medium, MaskBand::Large];

    pub fn bounds(self) -> (f64, f64) {
        match self {
            MaskBand::Small => (0.01, 0.2),
            MaskBand::Medium => (0.2, 0.4),
            MaskBand::Large => (0.4, 0.6),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MaskBand::Small => "1-20%",
            MaskBand::Medium => "20-40%",
            MaskBand::Large => "40-60%",
        }
    }

    /// Bands are half-open `[lo, hi)` except the last, which includes 60%.
    pub fn of_fraction(fraction: f64) -> Option<MaskBand> {
        match fraction {
            f if (0.01..0.2).contains(&f) => Some(MaskBand::Small),
            f if (0.2..0.4).contains(&f) => Some(MaskBand::Medium),
            f if (0.4..=0.6).contains(&f) => Some(MaskBand::Large),
            _ => None,
        }
    }

    pub fn contains(self, fraction: f64) -> bool {
        let (lo, hi) = self.bounds();
        (lo..=hi).contains(&fraction)
    }

    /// Midpoint of the band, used as a default coverage target.
    pub fn center(self) -> f64 {
        let (lo, hi) = self.bounds();
        0.5 * (lo + hi)
    }
}

pub fn generate_irregular_mask(
    height: usize,
    width: usize,
    coverage_target: f64,
    seed: u64,
) -> Result<BinaryMask> {
    ensure!(height > 0 && width > 0, "mask must be non-empty");
    let band = MaskBand::of_fraction(coverage_target).ok_or_else(|| {
        Error::contract(format!(
            "coverage target {coverage_target} is outside the 1-60% evaluation bands"
        ))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let mask = draw_attempt(&mut rng, height, width, coverage_target);
        let frac = mask.corrupted_fraction();
        if band.contains(frac) {
            return Ok(mask);
        }
    }
    Err(Error::Diagnostic(format!(
        "no {height}x{width} mask within band {} after {MAX_ATTEMPTS} attempts (seed {seed})",
        band.label()
    )))
}

fn draw_attempt(rng: &mut ChaCha8Rng, h: usize, w: usize, target: f64) -> BinaryMask {
    let mut canvas = Canvas::new(h, w);
    let short = h.min(w) as f64;
    let long = h.max(w) as f64;
    'strokes: for _ in 0..MAX_STROKES {
        let brush = (rng.random_range(0.05..=0.15) * short).max(1.0);
        let segments = rng.random_range(8..=24);
        let mut y = rng.random_range(0.0..h as f64);
        let mut x = rng.random_range(0.0..w as f64);
        for _ in 0..segments {
            let angle = rng.random_range(0.0..TAU);
            let length = rng.random_range(0.02..0.1) * long;
            let ny = (y + length * angle.sin()).clamp(0.0, (h - 1) as f64);
            let nx = (x + length * angle.cos()).clamp(0.0, (w - 1) as f64);
            canvas.line(y, x, ny, nx, brush * 0.5);
            y = ny;
            x = nx;
            if canvas.fraction() >= target {
                break 'strokes;
            }
        }
    }
    canvas.into_mask()
}

struct Canvas {
    h: usize,
    w: usize,
    known: Vec<u8>,
    corrupted: usize,
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            known: vec![1; h * w],
            corrupted: 0,
        }
    }

    fn fraction(&self) -> f64 {
        self.corrupted as f64 / (self.h * self.w) as f64
    }

    fn disc(&mut self, cy: f64, cx: f64, r: f64) {
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil() as usize).min(self.h - 1);
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil() as usize).min(self.w - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let i = y * self.w + x;
                if dy * dy + dx * dx <= r * r && self.known[i] == 1 {
                    self.known[i] = 0;
                    self.corrupted += 1;
                }
            }
        }
    }

    fn line(&mut self, y0: f64, x0: f64, y1: f64, x1: f64, r: f64) {
        let len = ((y1 - y0).powi(2) + (x1 - x0).powi(2)).sqrt();
        let steps = len.ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            self.disc(y0 + t * (y1 - y0), x0 + t * (x1 - x0), r);
        }
    }

    fn into_mask(self) -> BinaryMask {
        BinaryMask::new(self.h, self.w, self.known).expect("canvas holds only 0/1")
    }
}
