//! Dense layers and row-wise normalizations over `[N, D]` matrices.

use crate::error::{AutogradError, Result};
use crate::scalar::{gemm, Scalar};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Denominator floor used by [`Var::l2_normalize`].
pub const L2_EPSILON: f64 = 1e-12;

fn rows_cols(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match shape {
        [n, d] => Ok((*n, *d)),
        _ => Err(AutogradError::invalid(
            op,
            format!("expected a 2-d [N, D] input, got {shape:?}"),
        )),
    }
}

/// Row-wise softmax of a row-major `rows × cols` buffer.
pub fn softmax_rows<T: Scalar>(data: &[T], cols: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

impl<'t, T: Scalar> Var<'t, T> {
    /// `[N, D] x [D, E] -> [N, E]`.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a_shape, b_shape) = (self.shape(), rhs.shape());
        let (n, d) = rows_cols(&a_shape, "matmul")?;
        let (d2, e) = rows_cols(&b_shape, "matmul")?;
        if d != d2 {
            return Err(AutogradError::shapes("matmul", &a_shape, &b_shape));
        }
        let (a, b) = (self.value(), rhs.value());
        let mut out = vec![T::zero(); n * e];
        gemm(n, d, e, a.data(), false, b.data(), false, &mut out, false);
        let out = Tensor::from_vec(out, &[n, e])?;
        Ok(self.tape().record(&[self, rhs], out, move |g| {
            let mut ga = vec![T::zero(); n * d];
            gemm(n, e, d, g.data(), false, b.data(), true, &mut ga, false);
            let mut gb = vec![T::zero(); d * e];
            gemm(d, n, e, a.data(), true, g.data(), false, &mut gb, false);
            vec![
                Some(Tensor::from_vec(ga, &[n, d]).expect("shape")),
                Some(Tensor::from_vec(gb, &[d, e]).expect("shape")),
            ]
        }))
    }

    /// Adds a `[E]` bias to every row of an `[N, E]` matrix.
    pub fn add_row_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (_, e) = rows_cols(&shape, "add_row_bias")?;
        if bias.shape() != [e] {
            return Err(AutogradError::shapes("add_row_bias", &shape, &bias.shape()));
        }
        let b = bias.value();
        let mut out = (*self.value()).clone();
        for row in out.data_mut().chunks_mut(e) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        Ok(self.tape().record(&[self, bias], out, move |g| {
            let mut gb = vec![T::zero(); e];
            for row in g.data().chunks(e) {
                for (acc, &v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            vec![
                Some(g.clone()),
                Some(Tensor::from_vec(gb, &[e]).expect("shape")),
            ]
        }))
    }

    /// Fully connected layer: `x[N, D] · w[D, E] + b[E]`.
    pub fn linear(self, weight: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul(weight)?.add_row_bias(bias)
    }

    /// Softmax along the last axis of an `[N, D]` matrix.
    pub fn softmax(self) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (_, d) = rows_cols(&shape, "softmax")?;
        let y = Tensor::from_vec(softmax_rows(self.value().data(), d), &shape)?;
        let saved = y.clone();
        Ok(self.tape().record(&[self], y, move |g| {
            let mut gx = g.clone();
            for (gr, yr) in gx.data_mut().chunks_mut(d).zip(saved.data().chunks(d)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for (gv, &yv) in gr.iter_mut().zip(yr) {
                    *gv = yv * (*gv - dot);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Divides each row by `max(‖row‖₂, epsilon)`.
    pub fn l2_normalize(self, epsilon: f64) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (n, d) = rows_cols(&shape, "l2_normalize")?;
        let eps = T::from_f64_lossy(epsilon);
        let x = self.value();
        let norms: Vec<T> = x
            .data()
            .chunks(d)
            .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        let mut y = (*x).clone();
        for (row, &nrm) in y.data_mut().chunks_mut(d).zip(&norms) {
            let den = nrm.max(eps);
            for v in row.iter_mut() {
                *v /= den;
            }
        }
        let saved_y = y.clone();
        Ok(self.tape().record(&[self], y, move |g| {
            let mut gx = g.clone();
            for i in 0..n {
                let nrm = norms[i];
                let gr = &mut gx.data_mut()[i * d..(i + 1) * d];
                if nrm > eps {
                    let yr = &saved_y.data()[i * d..(i + 1) * d];
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for (gv, &yv) in gr.iter_mut().zip(yr) {
                        *gv = (*gv - yv * dot) / nrm;
                    }
                } else {
                    for gv in gr.iter_mut() {
                        *gv /= eps;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Mean cross entropy of `[N, K]` logits against integer labels.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (n, k) = rows_cols(&shape, "cross_entropy")?;
        if labels.len() != n {
            return Err(AutogradError::shapes(
                "cross_entropy",
                &shape,
                &[labels.len()],
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(AutogradError::LabelOutOfRange { label, classes: k });
        }
        let probs = softmax_rows(self.value().data(), k);
        let x = self.value();
        let mut loss = T::zero();
        for (row, &label) in x.data().chunks(k).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[label];
        }
        let inv_n = T::one() / T::from_usize(n.max(1)).expect("count");
        let labels = labels.to_vec();
        Ok(self
            .tape()
            .record(&[self], Tensor::scalar(loss * inv_n), move |g| {
                let scale = g.item() * inv_n;
                let mut gx = probs;
                for (row, &label) in gx.chunks_mut(k).zip(&labels) {
                    row[label] -= T::one();
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                vec![Some(Tensor::from_vec(gx, &[n, k]).expect("shape"))]
            }))
    }
}
