//! Bilinear sampling at fractional positions, and the deformable-convolution
//! gather built on it. Columns always wrap (angular axis); the row boundary
//! is selectable.

use crate::error::{AutogradError, Result};
use crate::ops::conv::same_padding;
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// How rows outside `[0, H-1]` are resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowBoundary {
    /// Clamp the row coordinate into range (no gradient through the clamp).
    Clamp,
    /// Rows outside the image read as zero, matching zero padding.
    Zero,
}

/// The four neighbours of a sample point and its fractional position.
#[derive(Clone, Copy, Debug)]
struct Taps<T> {
    rows: [Option<usize>; 2],
    cols: [usize; 2],
    fy: T,
    fx: T,
    row_grad: bool,
}

impl<T: Scalar> Taps<T> {
    fn locate(y: T, x: T, h: usize, w: usize, boundary: RowBoundary) -> Self {
        let x0 = x.floor();
        let fx = x - x0;
        let x0 = x0.to_i64().unwrap_or(0);
        let wi = w as i64;
        let cols = [x0.rem_euclid(wi) as usize, (x0 + 1).rem_euclid(wi) as usize];
        let hmax = T::from_usize(h - 1).expect("extent");
        match boundary {
            RowBoundary::Clamp => {
                let row_grad = y > T::zero() && y < hmax;
                let yc = y.max(T::zero()).min(hmax);
                let mut y0 = yc.floor().to_usize().unwrap_or(0);
                if h >= 2 {
                    y0 = y0.min(h - 2);
                }
                let fy = yc - T::from_usize(y0).expect("index");
                let y1 = (y0 + 1).min(h - 1);
                Taps {
                    rows: [Some(y0), Some(y1)],
                    cols,
                    fy,
                    fx,
                    row_grad,
                }
            }
            RowBoundary::Zero => {
                let y0 = y.floor();
                let fy = y - y0;
                let y0 = y0.to_i64().unwrap_or(-2);
                let valid = |r: i64| (r >= 0 && r < h as i64).then_some(r as usize);
                Taps {
                    rows: [valid(y0), valid(y0 + 1)],
                    cols,
                    fy,
                    fx,
                    row_grad: true,
                }
            }
        }
    }

    #[inline]
    fn fetch(&self, plane: &[T], w: usize) -> [T; 4] {
        let get = |r: Option<usize>, c: usize| r.map_or(T::zero(), |r| plane[r * w + c]);
        [
            get(self.rows[0], self.cols[0]),
            get(self.rows[0], self.cols[1]),
            get(self.rows[1], self.cols[0]),
            get(self.rows[1], self.cols[1]),
        ]
    }

    #[inline]
    fn weights(&self) -> [T; 4] {
        let one = T::one();
        [
            (one - self.fy) * (one - self.fx),
            (one - self.fy) * self.fx,
            self.fy * (one - self.fx),
            self.fy * self.fx,
        ]
    }

    #[inline]
    fn interpolate(&self, p: [T; 4]) -> T {
        let w = self.weights();
        w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + w[3] * p[3]
    }

    /// d value / d (y, x).
    #[inline]
    fn slope(&self, p: [T; 4]) -> (T, T) {
        let one = T::one();
        let dy = (one - self.fx) * (p[2] - p[0]) + self.fx * (p[3] - p[1]);
        let dx = (one - self.fy) * (p[1] - p[0]) + self.fy * (p[3] - p[2]);
        (if self.row_grad { dy } else { T::zero() }, dx)
    }

    #[inline]
    fn scatter(&self, plane: &mut [T], w: usize, g: T) {
        let wt = self.weights();
        let idx = [
            (self.rows[0], self.cols[0]),
            (self.rows[0], self.cols[1]),
            (self.rows[1], self.cols[0]),
            (self.rows[1], self.cols[1]),
        ];
        for ((r, c), wv) in idx.into_iter().zip(wt) {
            if let Some(r) = r {
                plane[r * w + c] += g * wv;
            }
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Samples `self: [N, C, H, W]` at absolute fractional `(row, col)`
    /// positions `coords: [N, 2, Ho, Wo]`, giving `[N, C, Ho, Wo]`.
    /// Differentiable with respect to both the image and the coordinates.
    pub fn bilinear_sample(self, coords: Var<'t, T>, boundary: RowBoundary) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let cs = coords.shape();
        let ([n, c, h, w], [cn, two, oh, ow]) = (xs.as_slice(), cs.as_slice()) else {
            return Err(AutogradError::shapes("bilinear_sample", &xs, &cs));
        };
        let (n, c, h, w, oh, ow) = (*n, *c, *h, *w, *oh, *ow);
        if *cn != n || *two != 2 || h == 0 || w == 0 {
            return Err(AutogradError::shapes("bilinear_sample", &xs, &cs));
        }
        let x = self.value();
        let co = coords.value();
        let (plane, oplane) = (h * w, oh * ow);
        let mut taps = Vec::with_capacity(n * oplane);
        for b in 0..n {
            let cy = &co.data()[(b * 2) * oplane..(b * 2 + 1) * oplane];
            let cx = &co.data()[(b * 2 + 1) * oplane..(b * 2 + 2) * oplane];
            for p in 0..oplane {
                taps.push(Taps::locate(cy[p], cx[p], h, w, boundary));
            }
        }
        let mut out = vec![T::zero(); n * c * oplane];
        for b in 0..n {
            for ch in 0..c {
                let src = &x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                let dst = &mut out[(b * c + ch) * oplane..(b * c + ch + 1) * oplane];
                for (p, d) in dst.iter_mut().enumerate() {
                    let t = &taps[b * oplane + p];
                    *d = t.interpolate(t.fetch(src, w));
                }
            }
        }
        let out = Tensor::from_vec(out, &[n, c, oh, ow])?;
        Ok(self.tape().record(&[self, coords], out, move |g| {
            let mut dx = vec![T::zero(); n * c * plane];
            let mut dc = vec![T::zero(); n * 2 * oplane];
            for b in 0..n {
                for ch in 0..c {
                    let src = &x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    let gr = &g.data()[(b * c + ch) * oplane..(b * c + ch + 1) * oplane];
                    let dplane = &mut dx[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    for (p, &gv) in gr.iter().enumerate() {
                        let t = &taps[b * oplane + p];
                        t.scatter(dplane, w, gv);
                        let (sy, sx) = t.slope(t.fetch(src, w));
                        dc[(b * 2) * oplane + p] += gv * sy;
                        dc[(b * 2 + 1) * oplane + p] += gv * sx;
                    }
                }
            }
            vec![
                Some(Tensor::from_vec(dx, &[n, c, h, w]).expect("shape")),
                Some(Tensor::from_vec(dc, &[n, 2, oh, ow]).expect("shape")),
            ]
        }))
    }

    /// Deformable im2col: for every output position and kernel tap, samples
    /// `self: [N, C, H, W]` at the regular tap position plus a learned
    /// `(dy, dx)` offset read from `offsets: [N, 2·kh·kw, H, W]` (channel
    /// `2t` is the row offset of tap `t`, `2t+1` the column offset, taps in
    /// row-major kernel order). Rows outside the map read as zero.
    ///
    /// The result `[N, C·kh·kw, H, W]` uses the same row layout as the
    /// regular im2col, so a `[Co, C·kh·kw, 1, 1]` pointwise convolution of
    /// it with zero offsets reproduces [`Var::conv2d`] exactly.
    pub fn deform_gather(self, offsets: Var<'t, T>, kh: usize, kw: usize) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let os = offsets.shape();
        let taps_n = kh * kw;
        let ([n, c, h, w], [on, oc, ohh, oww]) = (xs.as_slice(), os.as_slice()) else {
            return Err(AutogradError::shapes("deform_gather", &xs, &os));
        };
        let (n, c, h, w) = (*n, *c, *h, *w);
        if *on != n || *oc != 2 * taps_n || *ohh != h || *oww != w || taps_n == 0 {
            return Err(AutogradError::shapes("deform_gather", &xs, &os));
        }
        let (lead_h, _) = same_padding(kh);
        let (lead_w, _) = same_padding(kw);
        let plane = h * w;
        let x = self.value();
        let off = offsets.value();

        let mut taps = Vec::with_capacity(n * taps_n * plane);
        for b in 0..n {
            for t in 0..taps_n {
                let (ky, kx) = (t / kw, t % kw);
                let oy = &off.data()[(b * 2 * taps_n + 2 * t) * plane..][..plane];
                let ox = &off.data()[(b * 2 * taps_n + 2 * t + 1) * plane..][..plane];
                for p in 0..plane {
                    let (py, px) = (p / w, p % w);
                    let y = T::from_f64_lossy(py as f64 + ky as f64 - lead_h as f64) + oy[p];
                    let xx = T::from_f64_lossy(px as f64 + kx as f64 - lead_w as f64) + ox[p];
                    taps.push(Taps::locate(y, xx, h, w, RowBoundary::Zero));
                }
            }
        }
        let tap_at = move |b: usize, t: usize, p: usize| (b * taps_n + t) * plane + p;

        let mut out = vec![T::zero(); n * c * taps_n * plane];
        for b in 0..n {
            for ch in 0..c {
                let src = &x.data()[(b * c + ch) * plane..][..plane];
                for t in 0..taps_n {
                    let dst = &mut out[((b * c + ch) * taps_n + t) * plane..][..plane];
                    for (p, d) in dst.iter_mut().enumerate() {
                        let tp = &taps[tap_at(b, t, p)];
                        *d = tp.interpolate(tp.fetch(src, w));
                    }
                }
            }
        }
        let out = Tensor::from_vec(out, &[n, c * taps_n, h, w])?;
        Ok(self.tape().record(&[self, offsets], out, move |g| {
            let mut dx = vec![T::zero(); n * c * plane];
            let mut doff = vec![T::zero(); n * 2 * taps_n * plane];
            for b in 0..n {
                for ch in 0..c {
                    let src = &x.data()[(b * c + ch) * plane..][..plane];
                    for t in 0..taps_n {
                        let gr = &g.data()[((b * c + ch) * taps_n + t) * plane..][..plane];
                        let dplane = &mut dx[(b * c + ch) * plane..][..plane];
                        let base = (b * 2 * taps_n + 2 * t) * plane;
                        for (p, &gv) in gr.iter().enumerate() {
                            let tp = &taps[tap_at(b, t, p)];
                            tp.scatter(dplane, w, gv);
                            let (sy, sx) = tp.slope(tp.fetch(src, w));
                            doff[base + p] += gv * sy;
                            doff[base + plane + p] += gv * sx;
                        }
                    }
                }
            }
            vec![
                Some(Tensor::from_vec(dx, &[n, c, h, w]).expect("shape")),
                Some(Tensor::from_vec(doff, &[n, 2 * taps_n, h, w]).expect("shape")),
            ]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    fn coords(ys: &[f64], xs: &[f64]) -> Tensor<f64> {
        let mut d = ys.to_vec();
        d.extend_from_slice(xs);
        Tensor::from_vec(d, &[1, 2, 1, ys.len()]).unwrap()
    }

    fn sample(img: Tensor<f64>, c: Tensor<f64>, b: RowBoundary) -> Vec<f64> {
        let tape = Tape::new();
        let x = tape.constant(img);
        let c = tape.constant(c);
        x.bilinear_sample(c, b).unwrap().value().data().to_vec()
    }

    #[test]
    fn integer_coordinates_gather() {
        let img = Tensor::from_fn(&[1, 1, 3, 4], |i| i as f64);
        let out = sample(
            img,
            coords(&[0.0, 2.0, 1.0], &[3.0, 1.0, 0.0]),
            RowBoundary::Clamp,
        );
        assert_eq!(out, vec![3.0, 9.0, 4.0]);
    }

    #[test]
    fn midpoint_interpolates() {
        let img = Tensor::from_vec(vec![0.0, 4.0, 0.0], &[1, 1, 1, 3]).unwrap();
        let out = sample(img, coords(&[0.0], &[0.5]), RowBoundary::Clamp);
        assert_eq!(out, vec![2.0]);
    }

    #[test]
    fn last_half_column_wraps_to_first() {
        let img = Tensor::from_vec(vec![6.0, 1.0, 1.0, 2.0], &[1, 1, 1, 4]).unwrap();
        let out = sample(img, coords(&[0.0], &[3.5]), RowBoundary::Clamp);
        assert_eq!(out, vec![4.0]);
        let img = Tensor::from_vec(vec![6.0, 1.0, 1.0, 2.0], &[1, 1, 1, 4]).unwrap();
        let out = sample(img, coords(&[0.0], &[-0.5]), RowBoundary::Clamp);
        assert_eq!(out, vec![4.0]);
    }

    #[test]
    fn rows_clamp_or_zero() {
        let img = Tensor::from_vec(vec![2.0, 8.0], &[1, 1, 2, 1]).unwrap();
        assert_eq!(
            sample(
                img.clone(),
                coords(&[-1.0, 5.0], &[0.0, 0.0]),
                RowBoundary::Clamp
            ),
            vec![2.0, 8.0]
        );
        assert_eq!(
            sample(img, coords(&[-0.5, 1.5], &[0.0, 0.0]), RowBoundary::Zero),
            vec![1.0, 4.0]
        );
    }

    #[test]
    fn gather_layout_matches_im2col_at_zero_offset() {
        let img = Tensor::from_fn(&[1, 2, 4, 5], |i| (i as f64 * 0.37).sin());
        let tape = Tape::new();
        let x = tape.constant(img);
        let off = tape.constant(Tensor::zeros(&[1, 18, 4, 5]));
        let cols = x.deform_gather(off, 3, 3).unwrap().value();
        // channel 1, tap (0, 0) at output (0, 0): row -1 is padding.
        assert_eq!(cols.data()[(9) * 20], 0.0);
        // channel 0, tap (1, 0) at output (2, 0): reads column -1 == 4.
        let expected = x.value().data()[2 * 5 + 4];
        assert_eq!(cols.data()[3 * 20 + 2 * 5], expected);
    }
}
