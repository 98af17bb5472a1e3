//! Normalized iris images: rubber-sheet unwrapping, intensity
//! normalization, rotation as circular column shift, synthetic classes and
//! file ingestion.

pub mod dataset;
pub mod io;
pub mod render;
mod rubber_sheet;
pub mod synth;

pub use rubber_sheet::{rubber_sheet, Circle, EyeImage};

use crate::error::{Error, Result};

/// Rows and columns of a normalized iris image.
pub const NORM_SIZE: usize = 128;

/// Unwrapped iris texture. Rows are radius (row 0 at the pupil boundary),
/// columns are angle (column 0 at angle 0, counterclockwise). The column
/// axis wraps.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedIris {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub mask: Vec<bool>,
    pub class_id: Option<usize>,
    /// Rotation applied since acquisition, in degrees.
    pub rotation_deg: f64,
}

impl NormalizedIris {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width || height == 0 || width == 0 {
            return Err(Error::invalid(
                "normalized iris",
                format!("{} pixels for a {height}x{width} grid", pixels.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            mask: vec![true; pixels.len()],
            pixels,
            class_id: None,
            rotation_deg: 0.0,
        })
    }

    pub fn with_class(mut self, class_id: usize) -> Self {
        self.class_id = Some(class_id);
        self
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col % self.width]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }

    /// Rotates the eye by `angle_deg`, realized as a circular shift of
    /// `round(angle / 360 · width)` columns. The mask moves with the pixels.
    pub fn rotate(&self, angle_deg: f64) -> Self {
        let shift = column_shift(angle_deg, self.width);
        let mut out = self.clone();
        let w = self.width as isize;
        for r in 0..self.height {
            for c in 0..self.width {
                let dst = r * self.width + (c as isize + shift).rem_euclid(w) as usize;
                out.pixels[dst] = self.pixels[r * self.width + c];
                out.mask[dst] = self.mask[r * self.width + c];
            }
        }
        out.rotation_deg = self.rotation_deg + angle_deg;
        out
    }

    /// `(pixel - mean) / std` over every pixel.
    pub fn intensity_normalize(&self, mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::invalid(
                "intensity statistics",
                format!("mean {mean}, std {std}; std must be positive and finite"),
            ));
        }
        let mut out = self.clone();
        for p in &mut out.pixels {
            *p = ((*p as f64 - mean) / std) as f32;
        }
        Ok(out)
    }
}

/// Column shift equivalent to a rotation: `round(angle / 360 · width)`.
pub fn column_shift(angle_deg: f64, width: usize) -> isize {
    (angle_deg / 360.0 * width as f64).round() as isize
}

/// Free-function form of [`NormalizedIris::rotate`].
pub fn rotate_normalized(img: &NormalizedIris, angle_deg: f64) -> NormalizedIris {
    img.rotate(angle_deg)
}

/// Pooled mean and population standard deviation of the valid pixels of a
/// set of images.
pub fn intensity_stats<'a>(
    images: impl IntoIterator<Item = &'a NormalizedIris>,
) -> Result<(f64, f64)> {
    let (mut n, mut sum, mut sum_sq) = (0usize, 0.0f64, 0.0f64);
    for img in images {
        for (&p, &m) in img.pixels.iter().zip(&img.mask) {
            if m {
                let v = p as f64;
                n += 1;
                sum += v;
                sum_sq += v * v;
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("intensity statistics", "no valid pixels"));
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Ok((mean, var.sqrt()))
}
