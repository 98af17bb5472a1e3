//! k-means++ seeded Lloyd clustering of local feature vectors, used to
//! initialize the VLAD layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const DRIFT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    /// Row-major `[k, dim]` centers.
    pub centers: Vec<f64>,
    pub k: usize,
    pub dim: usize,
    pub iterations: usize,
    /// Largest center movement in the final iteration.
    pub drift: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn distinct_count(points: &[f64], dim: usize, stop_at: usize) -> usize {
    let mut seen: Vec<Vec<u64>> = Vec::new();
    for p in points.chunks_exact(dim) {
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        if !seen.contains(&key) {
            seen.push(key);
            if seen.len() >= stop_at {
                break;
            }
        }
    }
    seen.len()
}

/// Clusters `points` (row-major, `dim` columns) into `k` groups.
/// Deterministic for a fixed `seed`.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64) -> Result<Clustering> {
    if dim == 0 || k == 0 || points.len() % dim != 0 {
        return Err(Error::invalid(
            "k-means input",
            format!(
                "{} values cannot form {dim}-dim points for k = {k}",
                points.len()
            ),
        ));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("k-means input", "non-finite coordinate"));
    }
    let n = points.len() / dim;
    let distinct = distinct_count(points, dim, k);
    if distinct < k {
        return Err(Error::invalid(
            "k-means input",
            format!("{distinct} distinct vectors among {n}, need at least {k}"),
        ));
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(point(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centers[..dim])).collect();
    while centers.len() < k * dim {
        let total: f64 = d2.iter().sum();
        // `total > 0` while fewer than `distinct` centers are chosen.
        let mut target = rng.gen::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        // Rounding can land on a zero-weight point; take the farthest instead.
        if d2[pick] == 0.0 {
            pick = (0..n).fold(0, |b, i| if d2[i] > d2[b] { i } else { b });
        }
        let start = centers.len();
        centers.extend_from_slice(point(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &centers[start..]));
        }
    }

    // Lloyd iterations.
    let mut iterations = 0;
    let mut drift = f64::INFINITY;
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    while iterations < MAX_ITERATIONS && drift >= DRIFT_TOLERANCE {
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for i in 0..n {
            let (c, _) = nearest(point(i), &centers, dim);
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        drift = 0.0;
        for c in 0..k {
            // An emptied cluster keeps its previous center.
            if counts[c] == 0 {
                continue;
            }
            let old = &mut centers[c * dim..(c + 1) * dim];
            let mut moved = 0.0;
            for (o, s) in old.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                let new = s / counts[c] as f64;
                moved += (new - *o) * (new - *o);
                *o = new;
            }
            drift = f64::max(drift, moved.sqrt());
        }
        iterations += 1;
    }
    Ok(Clustering {
        centers,
        k,
        dim,
        iterations,
        drift,
    })
}

/// Assignment parameters whose softmax approximates the nearest-center
/// rule: `W_k = 2α c_k`, `b_k = -α ‖c_k‖²`. Returns `(weight, bias)`.
pub fn assignment_from_centers(centers: &[f64], dim: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let weight = centers.iter().map(|c| 2.0 * alpha * c).collect();
    let bias = centers
        .chunks_exact(dim)
        .map(|c| -alpha * c.iter().map(|v| v * v).sum::<f64>())
        .collect();
    (weight, bias)
}
