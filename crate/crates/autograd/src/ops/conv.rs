//! 2-d cross-correlation over `[N, C, H, W]` maps.
//!
//! Rows (radius) are zero padded, columns (angle) wrap around. Padding is
//! "same" for stride 1; for even kernels the extra pad goes on the trailing
//! side.

use crate::error::{AutogradError, Result};
use crate::scalar::{gemm, Scalar};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Leading and trailing pad for a kernel extent.
pub fn same_padding(kernel: usize) -> (usize, usize) {
    let lead = (kernel - 1) / 2;
    (lead, kernel - 1 - lead)
}

pub fn output_extent(input: usize, stride: usize) -> usize {
    (input - 1) / stride + 1
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Source column for every (kx, ox), wrapped.
    fn column_table(&self) -> Vec<usize> {
        let (lead, _) = same_padding(self.kw);
        let mut table = Vec::with_capacity(self.kw * self.ow);
        for kx in 0..self.kw {
            for ox in 0..self.ow {
                let ix = (ox * self.stride + kx) as isize - lead as isize;
                table.push(ix.rem_euclid(self.w as isize) as usize);
            }
        }
        table
    }

    /// Source row for (ky, oy), or `None` inside the zero padding.
    fn source_row(&self, ky: usize, oy: usize) -> Option<usize> {
        let (lead, _) = same_padding(self.kh);
        let iy = (oy * self.stride + ky) as isize - lead as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, table: &[usize], col: &mut [T]) {
    let plane = g.h * g.w;
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let q = (ci * g.kh + ky) * g.kw + kx;
                let dst_row = &mut col[q * g.cols()..(q + 1) * g.cols()];
                let cols = &table[kx * g.ow..(kx + 1) * g.ow];
                for oy in 0..g.oh {
                    let dst = &mut dst_row[oy * g.ow..(oy + 1) * g.ow];
                    match g.source_row(ky, oy) {
                        Some(iy) => {
                            let src = &x[ci * plane + iy * g.w..ci * plane + (iy + 1) * g.w];
                            for (d, &ix) in dst.iter_mut().zip(cols) {
                                *d = src[ix];
                            }
                        }
                        None => dst.fill(T::zero()),
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &Geometry, table: &[usize], dx: &mut [T]) {
    let plane = g.h * g.w;
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let q = (ci * g.kh + ky) * g.kw + kx;
                let src_row = &col[q * g.cols()..(q + 1) * g.cols()];
                let cols = &table[kx * g.ow..(kx + 1) * g.ow];
                for oy in 0..g.oh {
                    if let Some(iy) = g.source_row(ky, oy) {
                        let dst = &mut dx[ci * plane + iy * g.w..ci * plane + (iy + 1) * g.w];
                        for (&v, &ix) in src_row[oy * g.ow..(oy + 1) * g.ow].iter().zip(cols) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Cross-correlation of `self: [N, C, H, W]` with `kernel: [Co, C, kh, kw]`
    /// plus an optional `[Co]` bias.
    pub fn conv2d(
        self,
        kernel: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
    ) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let ks = kernel.shape();
        let ([n, c, h, w], [co, kc, kh, kw]) = (xs.as_slice(), ks.as_slice()) else {
            return Err(AutogradError::shapes("conv2d", &xs, &ks));
        };
        let (n, c, h, w, co, kh, kw) = (*n, *c, *h, *w, *co, *kh, *kw);
        if *kc != c || kh == 0 || kw == 0 || h == 0 || w == 0 {
            return Err(AutogradError::shapes("conv2d", &xs, &ks));
        }
        if stride == 0 {
            return Err(AutogradError::invalid(
                "conv2d",
                "stride must be at least 1",
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [co] {
                return Err(AutogradError::shapes("conv2d bias", &ks, &b.shape()));
            }
        }
        let g = Geometry {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            oh: output_extent(h, stride),
            ow: output_extent(w, stride),
        };
        let table = g.column_table();
        let x = self.value();
        let k = kernel.value();
        let bias_val = bias.map(|b| b.value());

        let in_len = c * h * w;
        let out_len = co * g.cols();
        let mut out = vec![T::zero(); n * out_len];
        let mut col = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); g.rows() * g.cols()]
        };
        for i in 0..n {
            let xi = &x.data()[i * in_len..(i + 1) * in_len];
            let src: &[T] = if g.is_pointwise() {
                xi
            } else {
                im2col(xi, &g, &table, &mut col);
                &col
            };
            let oi = &mut out[i * out_len..(i + 1) * out_len];
            gemm(
                co,
                g.rows(),
                g.cols(),
                k.data(),
                false,
                src,
                false,
                oi,
                false,
            );
            if let Some(b) = &bias_val {
                for (row, &bv) in oi.chunks_mut(g.cols()).zip(b.data()) {
                    for v in row.iter_mut() {
                        *v += bv;
                    }
                }
            }
        }
        let out = Tensor::from_vec(out, &[n, co, g.oh, g.ow])?;

        let mut inputs = vec![self, kernel];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.tape().record(&inputs, out, move |gy| {
            let mut dx = vec![T::zero(); n * in_len];
            let mut dk = vec![T::zero(); co * g.rows()];
            let mut dcol = vec![T::zero(); g.rows() * g.cols()];
            let mut col = if g.is_pointwise() {
                Vec::new()
            } else {
                vec![T::zero(); g.rows() * g.cols()]
            };
            for i in 0..n {
                let xi = &x.data()[i * in_len..(i + 1) * in_len];
                let gi = &gy.data()[i * out_len..(i + 1) * out_len];
                let src: &[T] = if g.is_pointwise() {
                    xi
                } else {
                    im2col(xi, &g, &table, &mut col);
                    &col
                };
                gemm(co, g.cols(), g.rows(), gi, false, src, true, &mut dk, true);
                let dxi = &mut dx[i * in_len..(i + 1) * in_len];
                if g.is_pointwise() {
                    gemm(g.rows(), co, g.cols(), k.data(), true, gi, false, dxi, true);
                } else {
                    gemm(
                        g.rows(),
                        co,
                        g.cols(),
                        k.data(),
                        true,
                        gi,
                        false,
                        &mut dcol,
                        false,
                    );
                    col2im(&dcol, &g, &table, dxi);
                }
            }
            let mut grads = vec![
                Some(Tensor::from_vec(dx, &[n, c, h, w]).expect("shape")),
                Some(Tensor::from_vec(dk, &[co, c, kh, kw]).expect("shape")),
            ];
            if has_bias {
                let mut db = vec![T::zero(); co];
                for (j, row) in gy.data().chunks(g.cols()).enumerate() {
                    db[j % co] += row.iter().copied().sum::<T>();
                }
                grads.push(Some(Tensor::from_vec(db, &[co]).expect("shape")));
            }
            grads
        }))
    }

    /// Mean over the spatial extent: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(self) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let [n, c, h, w] = xs.as_slice() else {
            return Err(AutogradError::invalid(
                "global_avg_pool",
                format!("expected [N, C, H, W], got {xs:?}"),
            ));
        };
        let (n, c, plane) = (*n, *c, h * w);
        let inv = T::one() / T::from_usize(plane.max(1)).expect("count");
        let x = self.value();
        let data = x
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::from_vec(data, &[n, c])?;
        Ok(self.tape().record(&[self], out, move |g| {
            let mut dx = Vec::with_capacity(n * c * plane);
            for &gv in g.data() {
                dx.extend(std::iter::repeat(gv * inv).take(plane));
            }
            vec![Some(Tensor::from_vec(dx, &xs).expect("shape"))]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn even_kernel_pads_trailing() {
        assert_eq!(same_padding(4), (1, 2));
        assert_eq!(same_padding(9), (4, 4));
        assert_eq!(same_padding(1), (0, 0));
    }

    #[test]
    fn constant_kernel_on_ones() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let k = tape.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
        let y = x.conv2d(k, None, 1).unwrap().value();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn horizontal_average_wraps_around() {
        let mut img = Tensor::<f64>::zeros(&[1, 1, 1, 5]);
        img.data_mut()[0] = 1.0;
        let tape = Tape::new();
        let x = tape.constant(img);
        let k = tape.constant(Tensor::full(&[1, 1, 1, 3], 1.0 / 3.0));
        let y = x.conv2d(k, None, 1).unwrap().value();
        let third = 1.0 / 3.0;
        assert_eq!(y.data(), &[third, third, 0.0, 0.0, third]);
    }

    #[test]
    fn vertical_padding_is_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 3, 1]));
        let k = tape.constant(Tensor::ones(&[1, 1, 3, 1]));
        let y = x.conv2d(k, None, 1).unwrap().value();
        assert_eq!(y.data(), &[2.0, 3.0, 2.0]);
    }

    #[test]
    fn stride_two_extent() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 6, 5]));
        let k = tape.constant(Tensor::ones(&[2, 1, 3, 3]));
        let y = x.conv2d(k, None, 2).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 3, 3]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 4, 4]));
        let k = tape.constant(Tensor::ones(&[1, 3, 3, 3]));
        let msg = x.conv2d(k, None, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"));
    }
}
