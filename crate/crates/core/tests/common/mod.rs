#![allow(dead_code)]

use afinet_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Uniform values kept away from integers, so bilinear taps stay smooth.
pub fn off_lattice(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = rng.gen_range(lo..hi);
        if (v - v.round()).abs() > 0.1 {
            break v;
        }
    })
}

/// Direct evaluation of the aggregation formula for one sample.
/// `v[i][j]` is channel `j` of local vector `i`; returns the L2-normalized
/// `K·C` descriptor.
pub fn vlad_oracle(v: &[Vec<f64>], w: &[Vec<f64>], b: &[f64], c: &[Vec<f64>]) -> Vec<f64> {
    let k = b.len();
    let dim = c[0].len();
    let mut out = vec![0.0; k * dim];
    for vi in v {
        let scores: Vec<f64> = (0..k)
            .map(|kk| b[kk] + (0..dim).map(|j| w[kk][j] * vi[j]).sum::<f64>())
            .collect();
        let denom: f64 = scores.iter().map(|s| s.exp()).sum();
        for kk in 0..k {
            let a = scores[kk].exp() / denom;
            for j in 0..dim {
                out[kk * dim + j] += a * (vi[j] - c[kk][j]);
            }
        }
    }
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    out.iter().map(|x| x / norm).collect()
}

pub fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}
