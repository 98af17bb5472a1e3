use serde::{Deserialize, Serialize};

use super::loggabor::central_rows;
use super::IrisCode;
use crate::digest::digest_of;
use crate::iris::NormalizedIris;

const WEAK_RESPONSE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrdinalParams {
    /// Standard deviation of each Gaussian lobe, in pixels.
    pub lobe_sigma: f64,
    /// Horizontal distances between the two lobe centres; one bitplane each.
    pub distances: Vec<f64>,
    pub rows_used: usize,
}

impl Default for OrdinalParams {
    fn default() -> Self {
        Self {
            lobe_sigma: 3.0,
            distances: vec![9.0, 17.0],
            rows_used: 96,
        }
    }
}

impl OrdinalParams {
    pub fn digest(&self) -> String {
        digest_of(self)
    }
}

fn gaussian(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp()
}

/// Separable di-lobe kernel: vertical profile over `-rv..=rv` and horizontal
/// profile over `-rh..=rh`. Each lobe has unit mass, so the response to a
/// constant image is zero.
fn dilobe_kernel(sigma: f64, distance: f64) -> (Vec<f64>, Vec<f64>) {
    let rv = (3.0 * sigma).ceil() as isize;
    let rh = (distance / 2.0 + 3.0 * sigma).ceil() as isize;
    let mut v: Vec<f64> = (-rv..=rv).map(|y| gaussian(y as f64, sigma)).collect();
    let vs: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= vs);
    let left: Vec<f64> = (-rh..=rh)
        .map(|x| gaussian(x as f64 + distance / 2.0, sigma))
        .collect();
    let right: Vec<f64> = (-rh..=rh)
        .map(|x| gaussian(x as f64 - distance / 2.0, sigma))
        .collect();
    let (ls, rs): (f64, f64) = (left.iter().sum(), right.iter().sum());
    let h = left
        .iter()
        .zip(&right)
        .map(|(l, r)| l / ls - r / rs)
        .collect();
    (v, h)
}

/// Di-lobe ordinal filter response: left lobe minus right lobe, lobes
/// separated horizontally by `distance`. Columns wrap; rows outside the image
/// contribute nothing.
pub fn ordinal_response(img: &NormalizedIris, sigma: f64, distance: f64) -> Vec<f64> {
    let (v, h) = dilobe_kernel(sigma, distance);
    let (rv, rh) = ((v.len() / 2) as isize, (h.len() / 2) as isize);
    let (height, w) = (img.height as isize, img.width as isize);
    let mut out = vec![0.0; img.pixels.len()];
    for r in 0..height {
        for c in 0..w {
            let mut acc = 0.0;
            for (dy, kv) in (-rv..=rv).zip(&v) {
                let y = r + dy;
                if y < 0 || y >= height {
                    continue;
                }
                let row = img.row(y as usize);
                let mut line = 0.0;
                for (dx, kh) in (-rh..=rh).zip(&h) {
                    line += kh * row[(c + dx).rem_euclid(w) as usize] as f64;
                }
                acc += kv * line;
            }
            out[(r * w + c) as usize] = acc;
        }
    }
    out
}

/// One bitplane per inter-lobe distance: set where the left lobe is brighter.
pub fn ordinal_encode(img: &NormalizedIris, params: &OrdinalParams) -> IrisCode {
    let (start, n) = central_rows(img.height, params.rows_used);
    let w = img.width;
    let mut code = IrisCode::new(params.distances.len(), n, w, "ordinal", &params.digest());
    for (plane, &d) in params.distances.iter().enumerate() {
        let resp = ordinal_response(img, params.lobe_sigma, d);
        for r in 0..n {
            let src = start + r;
            let row = img.row(src);
            let rms = (row.iter().map(|&p| (p as f64).powi(2)).sum::<f64>() / w as f64).sqrt();
            for c in 0..w {
                let i = src * w + c;
                let valid = img.mask[i] && resp[i].abs() > WEAK_RESPONSE * rms;
                code.set(plane, r, c, resp[i] > 0.0, valid);
            }
        }
    }
    code
}
