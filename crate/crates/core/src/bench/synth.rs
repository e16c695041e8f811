//! Deterministic synthetic sequences: a block-textured target over a
//! smooth sinusoidal background, moved by a fixed schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Sequence;
use crate::error::{Error, Result};
use crate::features::Frame;
use crate::geometry::BoundingBox;
use crate::par;

const TEXTURE_BLOCKS: usize = 4;
const BACKGROUND_WAVES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    Static,
    /// Constant velocity in pixels per frame.
    Linear {
        dx: f64,
        dy: f64,
    },
    /// A step of `(dx, dy)` every `every` frames.
    Jump {
        dx: f64,
        dy: f64,
        every: usize,
    },
    /// Width and height grow by `growth` pixels per frame about a fixed center.
    ScaleRamp {
        growth: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub name: String,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub target_width: f64,
    pub target_height: f64,
    /// Top-left corner of the target in the first frame.
    pub start_x: f64,
    pub start_y: f64,
    pub motion: Motion,
    /// Standard deviation of per-pixel Gaussian noise, in gray levels.
    pub noise: f64,
    /// Amplitude of the background texture, in gray levels.
    pub background_contrast: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            frames: 100,
            width: 320,
            height: 240,
            target_width: 32.0,
            target_height: 32.0,
            start_x: 64.0,
            start_y: 104.0,
            motion: Motion::Static,
            noise: 0.0,
            background_contrast: 40.0,
            seed: 0,
        }
    }
}

fn spec_error(field: &str, message: impl Into<String>) -> Error {
    Error::SynthSpec {
        field: field.into(),
        message: message.into(),
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(spec_error("name", "must be a non-empty file name"));
        }
        if self.frames == 0 {
            return Err(spec_error("frames", "must be at least 1"));
        }
        if self.width < 8 || self.height < 8 {
            return Err(spec_error("width", "frame must be at least 8x8"));
        }
        for (field, v) in [
            ("target_width", self.target_width),
            ("target_height", self.target_height),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(spec_error(field, "must be positive"));
            }
        }
        for (field, v) in [("start_x", self.start_x), ("start_y", self.start_y)] {
            if !v.is_finite() {
                return Err(spec_error(field, "must be finite"));
            }
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(spec_error("noise", "must be non-negative"));
        }
        if !(self.background_contrast.is_finite() && self.background_contrast >= 0.0) {
            return Err(spec_error("background_contrast", "must be non-negative"));
        }
        match self.motion {
            Motion::Linear { dx, dy } | Motion::Jump { dx, dy, .. }
                if !(dx.is_finite() && dy.is_finite()) =>
            {
                return Err(spec_error("motion", "displacements must be finite"))
            }
            Motion::Jump { every: 0, .. } => {
                return Err(spec_error("motion.every", "must be at least 1"))
            }
            Motion::ScaleRamp { growth } if !growth.is_finite() => {
                return Err(spec_error("motion.growth", "must be finite"))
            }
            _ => {}
        }
        Ok(())
    }

    /// Ground-truth box of 0-based frame `i`.
    pub fn box_at(&self, i: usize) -> Result<BoundingBox> {
        let (x, y, w, h) = (
            self.start_x,
            self.start_y,
            self.target_width,
            self.target_height,
        );
        let b = match self.motion {
            Motion::Static => BoundingBox::new(x, y, w, h),
            Motion::Linear { dx, dy } => {
                BoundingBox::new(x + i as f64 * dx, y + i as f64 * dy, w, h)
            }
            Motion::Jump { dx, dy, every } => {
                let n = (i / every) as f64;
                BoundingBox::new(x + n * dx, y + n * dy, w, h)
            }
            Motion::ScaleRamp { growth } => {
                let g = i as f64 * growth;
                BoundingBox::new(x - g / 2.0, y - g / 2.0, w + g, h + g)
            }
        };
        b.map_err(|_| {
            spec_error(
                "motion",
                format!("target size collapses at frame {}", i + 1),
            )
        })
    }

    pub fn ground_truth(&self) -> Result<Vec<BoundingBox>> {
        self.validate()?;
        (0..self.frames)
            .map(|i| {
                let b = self.box_at(i)?;
                if b.x() < 0.0
                    || b.y() < 0.0
                    || b.right() > self.width as f64
                    || b.bottom() > self.height as f64
                {
                    return Err(spec_error(
                        "motion",
                        format!(
                            "target leaves the {}x{} frame at frame {}",
                            self.width,
                            self.height,
                            i + 1
                        ),
                    ));
                }
                Ok(b)
            })
            .collect()
    }
}

struct Scene {
    background: Vec<f64>,
    blocks: Vec<[f64; 3]>,
}

impl Scene {
    fn new(spec: &SynthSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let waves: Vec<([f64; 2], [f64; 3], [f64; 3])> = (0..BACKGROUND_WAVES)
            .map(|_| {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let freq = rng.random_range(0.02..0.12);
                let phase = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
                let amp = std::array::from_fn(|_| rng.random_range(0.5..1.0));
                ([freq * angle.cos(), freq * angle.sin()], phase, amp)
            })
            .collect();
        let norm = spec.background_contrast / BACKGROUND_WAVES as f64;
        let mut background = Vec::with_capacity(spec.width * spec.height * 3);
        for y in 0..spec.height {
            for x in 0..spec.width {
                for ch in 0..3 {
                    let v: f64 = waves
                        .iter()
                        .map(|(f, p, a)| a[ch] * (f[0] * x as f64 + f[1] * y as f64 + p[ch]).sin())
                        .sum();
                    background.push(128.0 + norm * v);
                }
            }
        }
        let blocks = (0..TEXTURE_BLOCKS * TEXTURE_BLOCKS)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..255.0)))
            .collect();
        Self { background, blocks }
    }

    fn render(&self, spec: &SynthSpec, b: &BoundingBox, index: usize) -> Result<Frame> {
        let mut pixels = self.background.clone();
        for y in 0..spec.height {
            let py = y as f64 + 0.5;
            if py < b.y() || py >= b.bottom() {
                continue;
            }
            let v = ((py - b.y()) / b.height() * TEXTURE_BLOCKS as f64) as usize;
            for x in 0..spec.width {
                let px = x as f64 + 0.5;
                if px < b.x() || px >= b.right() {
                    continue;
                }
                let u = ((px - b.x()) / b.width() * TEXTURE_BLOCKS as f64) as usize;
                let color = self.blocks
                    [v.min(TEXTURE_BLOCKS - 1) * TEXTURE_BLOCKS + u.min(TEXTURE_BLOCKS - 1)];
                pixels[(y * spec.width + x) * 3..][..3].copy_from_slice(&color);
            }
        }
        if spec.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(index as u64 + 1);
            let normal = Normal::new(0.0, spec.noise).expect("validated noise");
            for p in &mut pixels {
                *p += normal.sample(&mut rng);
            }
        }
        let bytes = pixels
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        Frame::new(spec.width, spec.height, bytes, index + 1)
    }
}

/// Renders every frame of `spec` with its exact ground truth.
pub fn synth_sequence(spec: &SynthSpec) -> Result<Sequence> {
    let truth = spec.ground_truth()?;
    let scene = Scene::new(spec);
    let frames = par::map_range(spec.frames, |i| scene.render(spec, &truth[i], i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Sequence::in_memory(spec.name.clone(), frames, truth)
}
