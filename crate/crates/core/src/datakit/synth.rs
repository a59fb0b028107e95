//! Procedural pseudo-radiographs: two textured bone bands separated by a
//! dark horizontal joint gap, with marginal bumps on KL-2 images.

use std::f64::consts::PI;

use super::Grade;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const NOISE_SIGMA: f64 = 0.02;
pub const MIN_SIDE: usize = 32;

/// Gap-width range as fractions of the image side.
pub fn gap_range(grade: Grade) -> (f64, f64) {
    match grade {
        Grade::Kl0 => (0.18, 0.28),
        Grade::Kl2 => (0.06, 0.12),
    }
}

pub fn osteo_range(grade: Grade) -> (f64, f64) {
    match grade {
        Grade::Kl0 => (0.0, 0.0),
        Grade::Kl2 => (0.02, 0.05),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub side: usize,
    pub grade: Grade,
    /// Nominal distance between the bone edges, in pixels.
    pub gap_width: f64,
    /// Peak bump height, in pixels.
    pub osteo_amp: f64,
    pub seed: u64,
    pub pixels: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct Wave {
    amp: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

#[derive(Clone, Copy, Debug)]
struct Bump {
    x0: f64,
    sigma: f64,
    upper: f64,
    lower: f64,
}

/// Every random draw behind one image.
#[derive(Clone, Debug)]
pub struct SynthParams {
    side: usize,
    grade: Grade,
    gap_width: f64,
    osteo_amp: f64,
    seed: u64,
    center: f64,
    upper_level: f64,
    lower_level: f64,
    gap_level: f64,
    shading: f64,
    texture: Vec<Wave>,
    upper_contour: Wave,
    lower_contour: Wave,
    bumps: Vec<Bump>,
}

impl SynthParams {
    pub fn draw(grade: Grade, seed: u64, side: usize) -> Result<Self> {
        if side < MIN_SIDE {
            return Err(Error::Range(format!(
                "synthetic images need side >= {MIN_SIDE}, got {side}"
            )));
        }
        let s = side as f64;
        let mut rng = Rng::new(seed);
        let (g0, g1) = gap_range(grade);
        let gap_width = rng.range(g0, g1) * s;
        let (o0, o1) = osteo_range(grade);
        let osteo_amp = if o1 > 0.0 { rng.range(o0, o1) * s } else { 0.0 };
        let center = s / 2.0 + rng.range(-0.04, 0.04) * s;
        let upper_level = rng.range(0.62, 0.78);
        let lower_level = rng.range(0.62, 0.78);
        let gap_level = rng.range(0.12, 0.2);
        let shading = rng.range(-0.15, 0.15);
        // whole cycles along x, so every wave averages to zero across a row
        let texture = (0..3)
            .map(|_| Wave {
                amp: rng.range(0.01, 0.03),
                fx: (1 + rng.below(6)) as f64,
                fy: rng.range(1.0, 6.0),
                phase: rng.range(0.0, 2.0 * PI),
            })
            .collect();
        let contour = |rng: &mut Rng| Wave {
            amp: rng.range(0.0, 0.01) * s,
            fx: (1 + rng.below(2)) as f64,
            fy: 0.0,
            phase: rng.range(0.0, 2.0 * PI),
        };
        let upper_contour = contour(&mut rng);
        let lower_contour = contour(&mut rng);
        let bumps = if osteo_amp > 0.0 {
            [0.1, 0.9]
                .iter()
                .map(|&c| Bump {
                    x0: (c + rng.range(-0.02, 0.02)) * s,
                    sigma: 0.035 * s,
                    upper: osteo_amp * rng.range(0.8, 1.0),
                    lower: osteo_amp * rng.range(0.8, 1.0),
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(SynthParams {
            side,
            grade,
            gap_width,
            osteo_amp,
            seed,
            center,
            upper_level,
            lower_level,
            gap_level,
            shading,
            texture,
            upper_contour,
            lower_contour,
            bumps,
        })
    }

    fn edges(&self, x: f64) -> (f64, f64) {
        let s = self.side as f64;
        let wave = |w: &Wave| w.amp * (2.0 * PI * w.fx * x / s + w.phase).sin();
        let mut top = self.center - self.gap_width / 2.0 + wave(&self.upper_contour);
        let mut bottom = self.center + self.gap_width / 2.0 + wave(&self.lower_contour);
        for b in &self.bumps {
            let k = (-(x - b.x0).powi(2) / (2.0 * b.sigma * b.sigma)).exp();
            top += b.upper * k;
            bottom -= b.lower * k;
        }
        (top, bottom)
    }

    /// Same draw with the gap forced to `px` pixels.
    pub fn with_gap_width(mut self, px: f64) -> Self {
        self.gap_width = px;
        self
    }

    /// Renders the image; `noise = false` gives the clean image the
    /// attributes describe exactly.
    pub fn render(&self, noise: bool) -> SynthImage {
        let n = self.side;
        let s = n as f64;
        let mut px = vec![0.0; n * n];
        let mut rng = Rng::stream(self.seed, &[0x6e01_5e]);
        for x in 0..n {
            let xc = x as f64 + 0.5;
            let (top, bottom) = self.edges(xc);
            let shade = self.shading * (xc / s - 0.5);
            for y in 0..n {
                let yf = y as f64;
                // fraction of the pixel row covered by each bone
                let up = (top - yf).clamp(0.0, 1.0);
                let low = (yf + 1.0 - bottom).clamp(0.0, 1.0);
                let tex: f64 = self
                    .texture
                    .iter()
                    .map(|w| w.amp * (2.0 * PI * (w.fx * xc + w.fy * (yf + 0.5)) / s + w.phase).cos())
                    .sum();
                let bone_u = self.upper_level + shade + tex;
                let bone_l = self.lower_level + shade + tex;
                let cover = (up + low).min(1.0);
                let mix = if up + low > 0.0 {
                    (up * bone_u + low * bone_l) / (up + low)
                } else {
                    0.0
                };
                let mut v = self.gap_level * (1.0 - cover) + mix * cover;
                if noise {
                    v += NOISE_SIGMA * rng.normal();
                }
                px[y * n + x] = v.clamp(0.0, 1.0);
            }
        }
        SynthImage {
            side: n,
            grade: self.grade,
            gap_width: self.gap_width,
            osteo_amp: self.osteo_amp,
            seed: self.seed,
            pixels: px,
        }
    }
}

pub fn synth_generate(grade: Grade, seed: u64, side: usize) -> Result<SynthImage> {
    Ok(SynthParams::draw(grade, seed, side)?.render(true))
}
