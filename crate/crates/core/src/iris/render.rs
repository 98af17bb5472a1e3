//! Annular eye rendering from a texture defined in polar coordinates.
//!
//! Used to exercise [`super::rubber_sheet`] against analytic expectations;
//! the model itself trains on textures synthesized directly in normalized
//! coordinates.

use super::rubber_sheet::{Circle, EyeImage};

/// Renders `texture(r, theta)` into an 8-bit eye image. `r` runs from 0 at
/// the pupil boundary to 1 at the iris boundary (clamped outside the
/// annulus), measured from the pupil centre with the radii interpolated
/// along the ray; `theta` is counterclockwise on screen. Texture values are
/// clamped to `[0, 1]`.
pub fn render_annulus(
    width: usize,
    height: usize,
    pupil: Circle,
    iris: Circle,
    texture: impl Fn(f64, f64) -> f64,
) -> EyeImage {
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 - pupil.cx;
            let dy = pupil.cy - y as f64;
            let rho = dx.hypot(dy);
            let theta = dy.atan2(dx);
            let outer = ray_to_circle(pupil.cx, pupil.cy, theta, iris);
            let r = ((rho - pupil.r) / (outer - pupil.r)).clamp(0.0, 1.0);
            let v = texture(r, theta).clamp(0.0, 1.0);
            pixels.push((v * 255.0).round() as u8);
        }
    }
    EyeImage {
        width,
        height,
        pixels,
        pupil,
        iris,
    }
}

/// Distance from `(ox, oy)` along screen angle `theta` to the far
/// intersection with `circle` (origin assumed inside it).
fn ray_to_circle(ox: f64, oy: f64, theta: f64, circle: Circle) -> f64 {
    let (ux, uy) = (theta.cos(), -theta.sin());
    let (fx, fy) = (ox - circle.cx, oy - circle.cy);
    let b = fx * ux + fy * uy;
    let c = fx * fx + fy * fy - circle.r * circle.r;
    -b + (b * b - c).max(0.0).sqrt()
}
