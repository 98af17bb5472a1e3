use std::f64::consts::TAU;

use super::NormalizedIris;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Circle {
    pub fn new(cx: f64, cy: f64, r: f64) -> Self {
        Self { cx, cy, r }
    }

    /// Boundary point at angle `theta`, counterclockwise on screen (image
    /// rows grow downward).
    fn point(&self, theta: f64) -> (f64, f64) {
        (
            self.cx + self.r * theta.cos(),
            self.cy - self.r * theta.sin(),
        )
    }

    fn inside(&self, width: usize, height: usize) -> bool {
        self.r > 0.0
            && self.cx - self.r >= 0.0
            && self.cy - self.r >= 0.0
            && self.cx + self.r <= (width - 1) as f64
            && self.cy + self.r <= (height - 1) as f64
    }
}

/// 8-bit grayscale eye image with localized pupil and iris boundaries.
#[derive(Clone, Debug)]
pub struct EyeImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub pupil: Circle,
    pub iris: Circle,
}

impl EyeImage {
    pub fn validate(&self) -> Result<()> {
        if self.pixels.len() != self.width * self.height || self.width < 2 || self.height < 2 {
            return Err(Error::invalid(
                "eye image",
                format!(
                    "{} pixels for {}x{}",
                    self.pixels.len(),
                    self.width,
                    self.height
                ),
            ));
        }
        if !(self.pupil.r < self.iris.r) {
            return Err(Error::invalid(
                "eye image",
                format!(
                    "pupil radius {} must be below iris radius {}",
                    self.pupil.r, self.iris.r
                ),
            ));
        }
        for (name, c) in [("pupil", self.pupil), ("iris", self.iris)] {
            if !c.inside(self.width, self.height) {
                return Err(Error::invalid(
                    "eye image",
                    format!(
                        "{name} circle {c:?} leaves the {}x{} image",
                        self.width, self.height
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Bilinear intensity in [0, 1], or `None` outside the pixel grid.
    fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let (wmax, hmax) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(0.0..=wmax).contains(&x) || !(0.0..=hmax).contains(&y) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width - 2);
        let y0 = (y.floor() as usize).min(self.height - 2);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let p = |r: usize, c: usize| self.pixels[r * self.width + c] as f64;
        let top = p(y0, x0) * (1.0 - fx) + p(y0, x0 + 1) * fx;
        let bottom = p(y0 + 1, x0) * (1.0 - fx) + p(y0 + 1, x0 + 1) * fx;
        Some((top * (1.0 - fy) + bottom * fy) / 255.0)
    }
}

/// Daugman rubber-sheet unwrapping to an `out_h × out_w` grid.
///
/// Output pixel `(i, j)` samples the point a fraction `i / (out_h - 1)` of
/// the way from the pupil boundary to the iris boundary along angle
/// `2π·j / out_w`; the two boundary points are taken on their own circles,
/// so non-concentric boundaries are handled.
pub fn rubber_sheet(eye: &EyeImage, out_h: usize, out_w: usize) -> Result<NormalizedIris> {
    eye.validate()?;
    if out_h < 2 || out_w == 0 {
        return Err(Error::invalid(
            "rubber sheet",
            format!("output grid {out_h}x{out_w} is too small"),
        ));
    }
    let mut pixels = vec![0f32; out_h * out_w];
    let mut mask = vec![false; out_h * out_w];
    for j in 0..out_w {
        let theta = TAU * j as f64 / out_w as f64;
        let (px, py) = eye.pupil.point(theta);
        let (ix, iy) = eye.iris.point(theta);
        for i in 0..out_h {
            let r = i as f64 / (out_h - 1) as f64;
            let x = (1.0 - r) * px + r * ix;
            let y = (1.0 - r) * py + r * iy;
            if let Some(v) = eye.sample(x, y) {
                pixels[i * out_w + j] = v as f32;
                mask[i * out_w + j] = true;
            }
        }
    }
    let mut out = NormalizedIris::new(out_h, out_w, pixels)?;
    out.mask = mask;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iris::render::render_annulus;

    #[test]
    fn rejects_pupil_larger_than_iris() {
        let eye = EyeImage {
            width: 100,
            height: 100,
            pixels: vec![0; 10_000],
            pupil: Circle::new(50.0, 50.0, 30.0),
            iris: Circle::new(50.0, 50.0, 20.0),
        };
        assert!(rubber_sheet(&eye, 128, 128).is_err());
    }

    #[test]
    fn rejects_circle_outside_image() {
        let eye = EyeImage {
            width: 100,
            height: 100,
            pixels: vec![0; 10_000],
            pupil: Circle::new(50.0, 50.0, 10.0),
            iris: Circle::new(80.0, 50.0, 30.0),
        };
        assert!(rubber_sheet(&eye, 128, 128).is_err());
    }

    #[test]
    fn output_is_always_128_square() {
        let eye = render_annulus(
            90,
            70,
            Circle::new(40.0, 33.0, 6.0),
            Circle::new(44.0, 35.0, 30.0),
            |_, _| 0.5,
        );
        let out = rubber_sheet(&eye, 128, 128).unwrap();
        assert_eq!(
            (out.height, out.width, out.pixels.len()),
            (128, 128, 128 * 128)
        );
        assert!(out.mask.iter().all(|&m| m));
    }
}
