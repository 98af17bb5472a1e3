//! Trainable VLAD aggregation as a single fused tape op.

use afinet_autograd::ops::dense::L2_EPSILON;
use afinet_autograd::{AutogradError, Result, Scalar, Tensor, Var};

/// Soft assignment `a[i, k] = softmax_k(W_k · v_i + b_k)` for one sample.
/// `v` is channel-major, `v[j * m + i]` holding channel `j` of vector `i`.
fn assignments<T: Scalar>(v: &[T], m: usize, c: usize, w: &[T], b: &[T], k: usize) -> Vec<T> {
    let mut a = vec![T::zero(); m * k];
    for i in 0..m {
        let row = &mut a[i * k..(i + 1) * k];
        for (kk, s) in row.iter_mut().enumerate() {
            let mut acc = b[kk];
            for j in 0..c {
                acc += w[kk * c + j] * v[j * m + i];
            }
            *s = acc;
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        for s in row.iter_mut() {
            *s /= total;
        }
    }
    a
}

/// Unnormalized VLAD of `v: [N, C, M]` (M local vectors of C channels)
/// against `K` clusters: `V[k, j] = Σ_i a[i, k] (v[i, j] - c[k, j])`,
/// flattened to `[N, K·C]`.
///
/// Each `V[k, j]` adds its M terms in ascending order of value, so permuting
/// the local vectors leaves the output bitwise unchanged.
pub fn vlad_residuals<'t, T: Scalar>(
    v: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Var<'t, T>,
    centers: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let vs = v.shape();
    let ws = weight.shape();
    let [n, c, m] = vs[..] else {
        return Err(AutogradError::shapes("vlad input", &vs, &ws));
    };
    let [k, wc] = ws[..] else {
        return Err(AutogradError::shapes("vlad weight", &vs, &ws));
    };
    if wc != c || bias.shape() != [k] || centers.shape() != [k, c] || k == 0 || m == 0 {
        return Err(AutogradError::invalid(
            "vlad",
            format!(
                "input {vs:?}, weight {ws:?}, bias {:?}, centers {:?}",
                bias.shape(),
                centers.shape()
            ),
        ));
    }
    let (xv, wv, bv, cv) = (v.value(), weight.value(), bias.value(), centers.value());
    let per = c * m;
    let mut out = vec![T::zero(); n * k * c];
    let mut all_a = Vec::with_capacity(n * m * k);
    let mut terms = vec![T::zero(); m];
    for s in 0..n {
        let x = &xv.data()[s * per..(s + 1) * per];
        let a = assignments(x, m, c, wv.data(), bv.data(), k);
        for kk in 0..k {
            for j in 0..c {
                let ckj = cv.data()[kk * c + j];
                for (i, t) in terms.iter_mut().enumerate() {
                    *t = a[i * k + kk] * (x[j * m + i] - ckj);
                }
                terms
                    .sort_unstable_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
                out[(s * k + kk) * c + j] = terms.iter().copied().sum();
            }
        }
        all_a.extend(a);
    }
    let out = Tensor::from_vec(out, &[n, k * c])?;

    Ok(v.tape().record(&[v, weight, bias, centers], out, move |g| {
        let (x, w, cen) = (xv.data(), wv.data(), cv.data());
        let mut dv = vec![T::zero(); n * per];
        let mut dw = vec![T::zero(); k * c];
        let mut db = vec![T::zero(); k];
        let mut dc = vec![T::zero(); k * c];
        let mut da = vec![T::zero(); m * k];
        for s in 0..n {
            let xs = &x[s * per..(s + 1) * per];
            let gs = &g.data()[s * k * c..(s + 1) * k * c];
            let a = &all_a[s * m * k..(s + 1) * m * k];
            let dvs = &mut dv[s * per..(s + 1) * per];
            for kk in 0..k {
                let mass: T = (0..m).map(|i| a[i * k + kk]).sum();
                for j in 0..c {
                    dc[kk * c + j] -= mass * gs[kk * c + j];
                }
            }
            for i in 0..m {
                for kk in 0..k {
                    let mut acc = T::zero();
                    for j in 0..c {
                        acc += gs[kk * c + j] * (xs[j * m + i] - cen[kk * c + j]);
                    }
                    da[i * k + kk] = acc;
                }
                let row = &a[i * k..(i + 1) * k];
                let mean: T = row
                    .iter()
                    .zip(&da[i * k..(i + 1) * k])
                    .map(|(&p, &q)| p * q)
                    .sum();
                for kk in 0..k {
                    // Softmax backward; `da` becomes the gradient of the score.
                    da[i * k + kk] = row[kk] * (da[i * k + kk] - mean);
                }
                for kk in 0..k {
                    let (ak, ds) = (row[kk], da[i * k + kk]);
                    db[kk] += ds;
                    for j in 0..c {
                        let xij = xs[j * m + i];
                        dw[kk * c + j] += ds * xij;
                        dvs[j * m + i] += ak * gs[kk * c + j] + ds * w[kk * c + j];
                    }
                }
            }
        }
        vec![
            Some(Tensor::from_vec(dv, &[n, c, m]).expect("shape")),
            Some(Tensor::from_vec(dw, &[k, c]).expect("shape")),
            Some(Tensor::from_vec(db, &[k]).expect("shape")),
            Some(Tensor::from_vec(dc, &[k, c]).expect("shape")),
        ]
    }))
}

/// VLAD aggregation followed by a single global L2 normalization.
pub fn netvlad<'t, T: Scalar>(
    v: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Var<'t, T>,
    centers: Var<'t, T>,
) -> Result<Var<'t, T>> {
    vlad_residuals(v, weight, bias, centers)?.l2_normalize(L2_EPSILON)
}

/// Soft assignments of every local vector of `v: [N, C, M]` as `[N, M, K]`,
/// for inspection and tests.
pub fn soft_assignments<T: Scalar>(
    v: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, m] = v.shape()[..] else {
        return Err(AutogradError::shapes(
            "vlad input",
            v.shape(),
            weight.shape(),
        ));
    };
    let k = bias.len();
    if weight.shape() != [k, c] {
        return Err(AutogradError::shapes(
            "vlad weight",
            v.shape(),
            weight.shape(),
        ));
    }
    let mut out = Vec::with_capacity(n * m * k);
    for s in 0..n {
        out.extend(assignments(
            &v.data()[s * c * m..(s + 1) * c * m],
            m,
            c,
            weight.data(),
            bias.data(),
            k,
        ));
    }
    Tensor::from_vec(out, &[n, m, k])
}
