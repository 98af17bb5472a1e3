use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::IrisCode;
use crate::digest::digest_of;
use crate::iris::NormalizedIris;

/// Fraction of the row RMS below which a response is too weak to trust.
const WEAK_RESPONSE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogGaborParams {
    /// Centre wavelength in columns.
    pub wavelength_px: f64,
    /// Bandwidth ratio σ/f₀ of the Gaussian on the log-frequency axis.
    pub sigma_over_f: f64,
    /// Number of central rows encoded.
    pub rows_used: usize,
}

impl Default for LogGaborParams {
    fn default() -> Self {
        Self {
            wavelength_px: 18.0,
            sigma_over_f: 0.5,
            rows_used: 96,
        }
    }
}

impl LogGaborParams {
    pub fn digest(&self) -> String {
        digest_of(self)
    }

    /// One-sided transfer function over `n` DFT bins. Negative frequencies and
    /// DC are zero, so the response is analytic.
    pub fn transfer(&self, n: usize) -> Vec<f64> {
        let f0 = 1.0 / self.wavelength_px;
        let denom = 2.0 * self.sigma_over_f.ln().powi(2);
        (0..n)
            .map(|k| {
                if k == 0 || 2 * k > n {
                    0.0
                } else {
                    let f = k as f64 / n as f64;
                    (-(f / f0).ln().powi(2) / denom).exp()
                }
            })
            .collect()
    }
}

/// First row and row count of the central band actually encoded.
pub(super) fn central_rows(height: usize, rows_used: usize) -> (usize, usize) {
    let n = rows_used.min(height);
    ((height - n) / 2, n)
}

/// Spatial kernel of the filter for rows of length `n`: the inverse DFT of
/// [`LogGaborParams::transfer`].
pub fn loggabor_kernel(params: &LogGaborParams, n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = params
        .transfer(n)
        .into_iter()
        .map(|g| Complex64::new(g / n as f64, 0.0))
        .collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf
}

/// Complex log-Gabor response of every row of `img`, by wrapped spatial
/// convolution. Every column is summed in the same order, so a circular
/// shift of the input shifts the response exactly.
pub fn loggabor_response(img: &NormalizedIris, params: &LogGaborParams) -> Vec<Vec<Complex64>> {
    let w = img.width;
    let kernel = loggabor_kernel(params, w);
    (0..img.height)
        .map(|r| {
            let row = img.row(r);
            (0..w)
                .map(|c| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (x, k) in kernel.iter().enumerate() {
                        acc += k * row[(c + w - x) % w] as f64;
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Two bitplanes per pixel: sign of the real and of the imaginary part of the
/// log-Gabor response over the central rows.
pub fn loggabor_encode(img: &NormalizedIris, params: &LogGaborParams) -> IrisCode {
    let (start, n) = central_rows(img.height, params.rows_used);
    let mut code = IrisCode::new(2, n, img.width, "loggabor", &params.digest());
    let response = loggabor_response(img, params);
    for r in 0..n {
        let src = start + r;
        let row = img.row(src);
        let rms = (row.iter().map(|&p| (p as f64).powi(2)).sum::<f64>() / row.len() as f64).sqrt();
        let floor = WEAK_RESPONSE * rms;
        for (c, z) in response[src].iter().enumerate() {
            let valid = img.mask[src * img.width + c] && z.norm() > floor;
            code.set(0, r, c, z.re > 0.0, valid);
            code.set(1, r, c, z.im > 0.0, valid);
        }
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn image(f: impl Fn(usize, usize) -> f64) -> NormalizedIris {
        let px = (0..128 * 128).map(|i| f(i / 128, i % 128) as f32).collect();
        NormalizedIris::new(128, 128, px).unwrap()
    }

    #[test]
    fn sinusoid_at_centre_frequency_gives_half_period_blocks() {
        let params = LogGaborParams {
            wavelength_px: 16.0,
            ..Default::default()
        };
        let phase = 0.5;
        let img = image(|_, c| (TAU * c as f64 / 16.0 + phase).cos());
        let code = loggabor_encode(&img, &params);
        for c in 0..128 {
            // Analytic response is exp(i·arg), so the real part has the sign of cos(arg).
            let arg = TAU * c as f64 / 16.0 + phase;
            assert_eq!(code.bit(0, 10, c), arg.cos() > 0.0, "col {c}");
            assert_eq!(code.bit(1, 10, c), arg.sin() > 0.0, "col {c}");
            assert!(code.valid(0, 10, c));
        }
        // Blocks of 8 equal bits.
        let runs: Vec<bool> = (0..128).map(|c| code.bit(0, 0, c)).collect();
        let changes = (0..128).filter(|&c| runs[c] != runs[(c + 1) % 128]).count();
        assert_eq!(changes, 16);
    }

    #[test]
    fn response_matches_direct_circular_convolution() {
        let params = LogGaborParams::default();
        let img = image(|r, c| ((r * 31 + c * 17) % 23) as f64 / 23.0);
        let resp = loggabor_response(&img, &params);
        // Spatial kernel from the transfer function by a naive inverse DFT.
        let n = 128;
        let h = params.transfer(n);
        let kernel: Vec<(f64, f64)> = (0..n)
            .map(|x| {
                let (mut re, mut im) = (0.0, 0.0);
                for (k, g) in h.iter().enumerate() {
                    let a = TAU * (k * x) as f64 / n as f64;
                    re += g * a.cos() / n as f64;
                    im += g * a.sin() / n as f64;
                }
                (re, im)
            })
            .collect();
        for r in [0, 64, 127] {
            for c in [0, 5, 127] {
                let (mut re, mut im) = (0.0, 0.0);
                for x in 0..n {
                    let p = img.at(r, (c + n - x) % n) as f64;
                    re += kernel[x].0 * p;
                    im += kernel[x].1 * p;
                }
                assert!((resp[r][c].re - re).abs() < 1e-9);
                assert!((resp[r][c].im - im).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shift_equivariance() {
        let img = image(|r, c| ((r * 7 + c * c) % 29) as f64 / 29.0);
        let params = LogGaborParams::default();
        let a = loggabor_encode(&img, &params);
        let b = loggabor_encode(&img.rotate(45.0), &params);
        assert_eq!(a.shifted(16), b);
    }

    #[test]
    fn constant_image_is_masked() {
        let img = image(|_, _| 0.4);
        let code = loggabor_encode(&img, &LogGaborParams::default());
        assert!(code.valid_count() < code.total_bits() / 100);
    }

    #[test]
    fn uses_central_rows() {
        let code = loggabor_encode(&image(|_, c| c as f64), &LogGaborParams::default());
        assert_eq!(code.shape(), (2, 96, 128));
        assert_eq!(central_rows(128, 96), (16, 96));
    }
}
