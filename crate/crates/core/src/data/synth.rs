//! Moving-shape sequences with exact labels.
//!
//! Every sequence has a smooth two-colour background with per-frame pixel
//! noise and a set of solid shapes that move with their own velocity,
//! bouncing off the canvas edges. Drawing order (z-order, bottom to top):
//! background, distractors, then labelled objects in increasing id order.
//! A pixel's label is the id of the topmost labelled object covering it, so
//! occlusions between objects are resolved by id and distractors are never
//! labelled.

use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_sequence, SequenceRecord};
use crate::embedding::{Frame, LabelMap};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Rectangle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sequences: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub objects: usize,
    /// Shapes are drawn uniformly from this list.
    pub shapes: Vec<ShapeKind>,
    /// Range of the disk radius / rectangle half-extent in pixels.
    pub min_size: usize,
    pub max_size: usize,
    /// Maximum initial speed in pixels per frame (random direction).
    pub speed: f64,
    /// Fixed initial velocity `[vx, vy]` for every object; overrides `speed`.
    pub velocity: Option<[f64; 2]>,
    /// Per-frame uniform perturbation of each velocity component.
    pub velocity_jitter: f64,
    /// Adds one unlabelled copy of object 1 (same shape, size and colour).
    pub distractor: bool,
    /// Amplitude of the per-pixel uniform noise, in 8-bit levels.
    pub noise: u8,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sequences: 4,
            frames: 12,
            height: 64,
            width: 64,
            objects: 2,
            shapes: vec![ShapeKind::Disk, ShapeKind::Rectangle],
            min_size: 6,
            max_size: 10,
            speed: 2.0,
            velocity: None,
            velocity_jitter: 0.5,
            distractor: false,
            noise: 6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objects == 0 || self.objects > 255 {
            return Err(Error::config(format!("objects must be in 1..=255, got {}", self.objects)));
        }
        if self.sequences == 0 || self.frames == 0 {
            return Err(Error::config("sequences and frames must be positive"));
        }
        if self.shapes.is_empty() {
            return Err(Error::config("at least one shape kind is required"));
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return Err(Error::config(format!(
                "size range {}..={} is empty or zero",
                self.min_size, self.max_size
            )));
        }
        if 2 * self.max_size + 1 > self.height.min(self.width) {
            return Err(Error::config(format!(
                "objects of size {} do not fit a {}x{} canvas",
                self.max_size, self.height, self.width
            )));
        }
        if !(self.speed.is_finite() && self.speed >= 0.0 && self.velocity_jitter.is_finite() && self.velocity_jitter >= 0.0)
        {
            return Err(Error::config("speed and velocity_jitter must be finite and non-negative"));
        }
        if self.velocity.is_some_and(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::config("velocity must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Sprite {
    kind: ShapeKind,
    size: f64,
    color: [u8; 3],
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
}

impl Sprite {
    fn covers(&self, y: usize, x: usize) -> bool {
        let (dx, dy) = (x as f64 - self.cx, y as f64 - self.cy);
        match self.kind {
            ShapeKind::Disk => dx * dx + dy * dy <= self.size * self.size,
            ShapeKind::Rectangle => dx.abs() <= self.size && dy.abs() <= self.size,
        }
    }

    fn step(&mut self, cfg: &SynthConfig, rng: &mut ChaCha8Rng) {
        if cfg.velocity_jitter > 0.0 {
            self.vx += rng.random_range(-cfg.velocity_jitter..=cfg.velocity_jitter);
            self.vy += rng.random_range(-cfg.velocity_jitter..=cfg.velocity_jitter);
        }
        (self.cx, self.vx) = reflect(self.cx + self.vx, self.vx, self.size, cfg.width);
        (self.cy, self.vy) = reflect(self.cy + self.vy, self.vy, self.size, cfg.height);
    }
}

/// Keeps the centre within `[size, extent - 1 - size]` by mirroring.
fn reflect(mut c: f64, mut v: f64, size: f64, extent: usize) -> (f64, f64) {
    let (lo, hi) = (size, extent as f64 - 1.0 - size);
    for _ in 0..8 {
        if c < lo {
            c = 2.0 * lo - c;
            v = -v;
        } else if c > hi {
            c = 2.0 * hi - c;
            v = -v;
        } else {
            break;
        }
    }
    (c.clamp(lo, hi), v)
}

fn random_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    // Saturated colours keep objects distinct from the darker background.
    let mut c = [rng.random_range(30..=110), rng.random_range(30..=110), rng.random_range(30..=110)];
    c[rng.random_range(0..3)] = rng.random_range(190..=250);
    c
}

fn spawn(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Sprite {
    let kind = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
    let size = rng.random_range(cfg.min_size..=cfg.max_size) as f64;
    let cx = rng.random_range(size..=cfg.width as f64 - 1.0 - size).round();
    let cy = rng.random_range(size..=cfg.height as f64 - 1.0 - size).round();
    let (vx, vy) = match cfg.velocity {
        Some([vx, vy]) => (vx, vy),
        None => {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let speed = rng.random_range(0.0..=cfg.speed);
            (speed * angle.cos(), speed * angle.sin())
        }
    };
    Sprite {
        kind,
        size,
        color: random_color(rng),
        cx,
        cy,
        vx,
        vy,
    }
}

fn generate_one(cfg: &SynthConfig, index: usize, rng: &mut ChaCha8Rng) -> Result<SequenceRecord> {
    let (h, w) = (cfg.height, cfg.width);
    let corners: [[u8; 3]; 2] = [
        [rng.random_range(0..90), rng.random_range(0..90), rng.random_range(0..90)],
        [rng.random_range(0..90), rng.random_range(0..90), rng.random_range(0..90)],
    ];
    let mut objects: Vec<Sprite> = (0..cfg.objects).map(|_| spawn(cfg, rng)).collect();
    let mut distractors: Vec<Sprite> = Vec::new();
    if cfg.distractor {
        let mut d = spawn(cfg, rng);
        let o = &objects[0];
        (d.kind, d.size, d.color) = (o.kind, o.size, o.color);
        (d.cx, d.cy) = (
            d.cx.clamp(d.size, w as f64 - 1.0 - d.size),
            d.cy.clamp(d.size, h as f64 - 1.0 - d.size),
        );
        distractors.push(d);
    }

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut labels = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        if t > 0 {
            for s in distractors.iter_mut().chain(objects.iter_mut()) {
                s.step(cfg, rng);
            }
        }
        let mut img = RgbImage::new(w as u32, h as u32);
        let mut label = LabelMap::filled(h, w, 0);
        for y in 0..h {
            for x in 0..w {
                let a = (x + y) as f64 / (h + w).max(2) as f64;
                let mut px = [0u8; 3];
                for (c, v) in px.iter_mut().enumerate() {
                    *v = (corners[0][c] as f64 * (1.0 - a) + corners[1][c] as f64 * a).round() as u8;
                }
                for d in &distractors {
                    if d.covers(y, x) {
                        px = d.color;
                    }
                }
                for (i, o) in objects.iter().enumerate() {
                    if o.covers(y, x) {
                        px = o.color;
                        label.set(y, x, (i + 1) as u8);
                    }
                }
                if cfg.noise > 0 {
                    let n = cfg.noise as i16;
                    for v in &mut px {
                        *v = (*v as i16 + rng.random_range(-n..=n)).clamp(0, 255) as u8;
                    }
                }
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        frames.push(Frame::from_rgb8(&img));
        labels.push(label);
    }
    SequenceRecord::new(format!("seq{index:03}"), frames, labels)
}

/// Generates the sequences in memory. Identical configs give identical data.
pub fn generate_sequences(cfg: &SynthConfig) -> Result<Vec<SequenceRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.sequences).map(|i| generate_one(cfg, i, &mut rng)).collect()
}

/// Generates the sequences and writes them under `out`, returning their directories.
pub fn generate_synthetic(cfg: &SynthConfig, out: &Path) -> Result<Vec<PathBuf>> {
    generate_sequences(cfg)?
        .iter()
        .map(|seq| write_sequence(out, seq))
        .collect()
}
