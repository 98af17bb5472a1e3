//! Synthetic iris classes generated directly in normalized coordinates.
//!
//! A class is a deterministic texture built from its seed: radial furrow
//! streaks (sinusoids with integer angular frequency, so the texture is
//! periodic across the column axis) plus band-limited blobs placed with
//! wrapped angular distance. Each sample of a class then gets its own radial
//! dilation warp, multiplicative shading, additive noise and rotation.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{NormalizedIris, NORM_SIZE};
use crate::error::{Error, Result};

const FURROWS: usize = 28;
const BLOBS: usize = 48;
const BASE_LEVEL: f64 = 0.5;
const CONTRAST: f64 = 0.13;

/// Per-sample nuisance parameters. Ranges are inclusive `(lo, hi)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Degradation {
    /// Rotation in degrees, drawn uniformly.
    pub rotation_range_deg: (f64, f64),
    /// Range of `ln γ` for the radial warp `r -> r^γ`.
    pub dilation_range: (f64, f64),
    /// Standard deviation of additive Gaussian noise (intensity units).
    pub noise_std: f64,
    /// Peak relative amplitude of the multiplicative shading gradient.
    pub shading_amp: f64,
}

impl Default for Degradation {
    fn default() -> Self {
        Self::none()
    }
}

impl Degradation {
    pub fn none() -> Self {
        Self {
            rotation_range_deg: (0.0, 0.0),
            dilation_range: (0.0, 0.0),
            noise_std: 0.0,
            shading_amp: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("rotation_range_deg", self.rotation_range_deg),
            ("dilation_range", self.dilation_range),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(
                    "degradation",
                    format!("{name} ({lo}, {hi}) is empty"),
                ));
            }
        }
        if !(self.noise_std >= 0.0) || !(self.shading_amp >= 0.0) || self.shading_amp >= 1.0 {
            return Err(Error::invalid(
                "degradation",
                format!(
                    "noise_std {} must be >= 0 and shading_amp {} in [0, 1)",
                    self.noise_std, self.shading_amp
                ),
            ));
        }
        Ok(())
    }
}

/// Nuisance values actually drawn for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDraw {
    pub rotation_deg: f64,
    pub gamma: f64,
    pub shading_phase: f64,
}

#[derive(Clone, Debug)]
struct Furrow {
    amp: f64,
    angular: f64,
    radial: f64,
    phase: f64,
}

#[derive(Clone, Debug)]
struct Blob {
    amp: f64,
    row: f64,
    col: f64,
    sigma: f64,
}

/// Identity texture of one synthetic class.
#[derive(Clone, Debug)]
pub struct ClassTexture {
    seed: u64,
    furrows: Vec<Furrow>,
    blobs: Vec<Blob>,
    offset: f64,
    scale: f64,
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(a)) ^ mix(b.wrapping_add(0x5151))))
}

impl ClassTexture {
    pub fn new(class_seed: u64) -> Self {
        let mut rng = stream(class_seed, 0xC1A55, 0);
        let furrows = (0..FURROWS)
            .map(|_| {
                let angular = rng.gen_range(3..=22) as f64;
                Furrow {
                    amp: rng.gen_range(0.5..1.0) / angular.sqrt(),
                    angular,
                    radial: rng.gen_range(-1.5..1.5),
                    phase: rng.gen_range(0.0..TAU),
                }
            })
            .collect();
        let blobs = (0..BLOBS)
            .map(|_| Blob {
                amp: if rng.gen::<bool>() { 1.0 } else { -1.0 } * rng.gen_range(0.6..1.2),
                row: rng.gen_range(0.0..(NORM_SIZE - 1) as f64),
                col: rng.gen_range(0.0..NORM_SIZE as f64),
                sigma: rng.gen_range(2.0..5.0),
            })
            .collect();
        let mut tex = Self {
            seed: class_seed,
            furrows,
            blobs,
            offset: 0.0,
            scale: 1.0,
        };
        let raw = tex.raw_field(1.0);
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        tex.offset = mean;
        tex.scale = 1.0 / var.sqrt().max(1e-12);
        tex
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Unscaled texture with rows read at warped radius `r^gamma`.
    fn raw_field(&self, gamma: f64) -> Vec<f64> {
        let (h, w) = (NORM_SIZE, NORM_SIZE);
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            let r = (i as f64 / (h - 1) as f64).powf(gamma);
            let row_px = r * (h - 1) as f64;
            let row = &mut out[i * w..(i + 1) * w];
            for f in &self.furrows {
                for (j, v) in row.iter_mut().enumerate() {
                    let t = f.angular * j as f64 / w as f64 + f.radial * r;
                    *v += f.amp * (TAU * t + f.phase).cos();
                }
            }
            for b in &self.blobs {
                let dr = row_px - b.row;
                if dr.abs() > 4.0 * b.sigma {
                    continue;
                }
                let inv = 1.0 / (2.0 * b.sigma * b.sigma);
                let rw = (-dr * dr * inv).exp();
                for (j, v) in row.iter_mut().enumerate() {
                    let mut dc = (j as f64 - b.col).rem_euclid(w as f64);
                    if dc > w as f64 / 2.0 {
                        dc -= w as f64;
                    }
                    *v += b.amp * rw * (-dc * dc * inv).exp();
                }
            }
        }
        out
    }

    /// Zero-mean, unit-variance texture (statistics of the unwarped field).
    pub fn field(&self, gamma: f64) -> Vec<f64> {
        self.raw_field(gamma)
            .into_iter()
            .map(|v| (v - self.offset) * self.scale)
            .collect()
    }

    /// Undegraded class image.
    pub fn base_image(&self) -> NormalizedIris {
        self.render(
            &SampleDraw {
                rotation_deg: 0.0,
                gamma: 1.0,
                shading_phase: 0.0,
            },
            0.0,
            0.0,
            None,
        )
    }

    fn render(
        &self,
        draw: &SampleDraw,
        shading_amp: f64,
        noise_std: f64,
        noise_rng: Option<&mut ChaCha8Rng>,
    ) -> NormalizedIris {
        let (h, w) = (NORM_SIZE, NORM_SIZE);
        let field = self.field(draw.gamma);
        let mut pixels: Vec<f64> = field.iter().map(|t| BASE_LEVEL + CONTRAST * t).collect();
        if shading_amp > 0.0 {
            for i in 0..h {
                let r = i as f64 / (h - 1) as f64;
                for j in 0..w {
                    let s =
                        (TAU * j as f64 / w as f64 - draw.shading_phase).cos() * (0.5 + 0.5 * r);
                    pixels[i * w + j] *= 1.0 + shading_amp * s;
                }
            }
        }
        if let Some(rng) = noise_rng {
            if noise_std > 0.0 {
                let normal = Normal::new(0.0, noise_std).expect("valid std");
                for p in &mut pixels {
                    *p += normal.sample(rng);
                }
            }
        }
        let px = pixels
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0) as f32)
            .collect();
        let img = NormalizedIris::new(h, w, px).expect("fixed size");
        if draw.rotation_deg != 0.0 {
            img.rotate(draw.rotation_deg)
        } else {
            img
        }
    }

    /// Sample `index` of this class under `degradation`; bit-identical for
    /// identical `(class seed, index, degradation)`.
    pub fn sample(
        &self,
        index: u64,
        degradation: &Degradation,
    ) -> Result<(NormalizedIris, SampleDraw)> {
        degradation.validate()?;
        let mut rng = stream(self.seed, 0x5A4D, index);
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..=hi)
            }
        };
        let rotation_deg = uniform(&mut rng, degradation.rotation_range_deg);
        let gamma = uniform(&mut rng, degradation.dilation_range).exp();
        let shading_phase = rng.gen_range(0.0..TAU);
        let draw = SampleDraw {
            rotation_deg,
            gamma,
            shading_phase,
        };
        let img = self.render(
            &draw,
            degradation.shading_amp,
            degradation.noise_std,
            Some(&mut rng),
        );
        Ok((img, draw))
    }
}

/// `count` degraded samples of the class identified by `class_seed`.
pub fn synth_iris_class(
    class_seed: u64,
    count: usize,
    degradation: &Degradation,
) -> Result<Vec<NormalizedIris>> {
    if count == 0 {
        return Err(Error::invalid(
            "synthetic class",
            "count must be at least 1",
        ));
    }
    degradation.validate()?;
    let tex = ClassTexture::new(class_seed);
    (0..count as u64)
        .map(|k| tex.sample(k, degradation).map(|(img, _)| img))
        .collect()
}

/// Normalized cross-correlation of two images, maximized over circular
/// column shifts.
pub fn best_shift_ncc(a: &NormalizedIris, b: &NormalizedIris) -> f64 {
    let center = |img: &NormalizedIris| {
        let n = img.pixels.len() as f64;
        let mean = img.pixels.iter().map(|&v| v as f64).sum::<f64>() / n;
        let v: Vec<f64> = img.pixels.iter().map(|&p| p as f64 - mean).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        (v, norm)
    };
    let (va, na) = center(a);
    let (vb, nb) = center(b);
    let (h, w) = (a.height, a.width);
    let mut best = f64::NEG_INFINITY;
    for s in 0..w {
        let mut acc = 0.0;
        for i in 0..h {
            let ra = &va[i * w..(i + 1) * w];
            let rb = &vb[i * w..(i + 1) * w];
            for j in 0..w {
                acc += ra[j] * rb[(j + s) % w];
            }
        }
        best = best.max(acc / (na * nb).max(1e-300));
    }
    best
}
